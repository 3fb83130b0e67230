"""Spiking-transformer pruning workbench.

Core pieces: a tape-based tensor engine, LIF/sLIF neuron layers backed
by fused kernels (compiled extension with a numpy fallback), the
spiking-transformer model, unstructured and structured pruning, the
compensation training pipeline, and the analysis suite.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .analysis import (
    EnergyModel,
    attention_rollout,
    compression_report,
    current_histogram,
    estimate_energy,
    firing_rates,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, build_dataset, load_config, parse_config
from .data import Dataset, load_idx_images, synth_dataset
from .errors import SpikePruneError
from .model import (
    STBlock,
    STModel,
    ForwardTrace,
    block_forward,
    build_model,
    count_params,
    model_forward,
    parse_arch,
    ssa_forward,
)
from .neuron import (
    NeuronState,
    SLIFParams,
    SpikingLayer,
    fire_and_reset,
    layer_forward,
    make_lif,
    make_slif,
    membrane_update,
)
from .optim import AdamW, optimizer_step
from .pruning import (
    PrunePlan,
    apply_plan,
    dsp_plan,
    dva_scores,
    l1p_mask,
    make_plan,
    random_plan,
)
from .tensor import Tape, Tensor, backward, cross_entropy, matmul
from .training import (
    RunLog,
    TrainConfig,
    evaluate,
    finetune,
    pretrain,
    replace_with_slif,
    sparsity_sweep,
)

__version__ = "0.1.0"
