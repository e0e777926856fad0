from .losses import composite_loss, pixel_loss
from .optim import build_optimizer, lr_at, partition_parameters
from .trainer import MetricsReport, evaluate, load_policy, save_policy, train
from .ablation import ablate, render_ablation_table, variant_config
