"""Lithography imaging oracle and learned optical-kernel regression.

Library layout:
  grid      centered FFTs and central crop/embed over complex grids
  optics    source/pupil construction, TCC assembly and eigenkernels,
            kernel-sum and source-point-sum aerial images, resist threshold
  neural    coordinate encoders and the complex-valued MLP
  training  kernel dimension rule, analytic gradients, optimizer loop
  metrics   MSE / PSNR / max error / mIOU / mPA and report aggregation
  datagen   synthetic Manhattan masks and oracle-rendered datasets
  formats   PGM / PFM images, NKRN kernel stacks, NMLP checkpoints
  config    JSON run configuration with strict validation
  cli       command-line interface wiring it all together
"""

from .errors import (ConfigError, DataError, DimensionError, FormatError,
                     LithoError, NumericError)
from .grid import (center_crop, center_embed, fft2_centered, ifft2_centered,
                   magnitude_sq)
from .metrics import EvalReport, evaluate, max_error, miou, mpa, mse, psnr
from .neural import (CMlpParams, CoordGrid, NerfEncoder, RawEncoder,
                     RffEncoder, cmlp_forward, crelu, encoder_from_spec,
                     init_params, make_coord_grid)
from .optics import (ImagingConfig, KernelStack, PupilFunction, SourceMap,
                     TccMatrix, abbe_image, assemble_tcc, build_pupil,
                     build_source, coverage_rank, decompose_tcc,
                     oracle_kernels, resist_image, socs_image, tcc_spectrum)
from .training import (GradientSet, NetworkConfig, TrainConfig, build_encoder,
                       export_kernels, fit, forward_predict, kernel_dims,
                       loss, loss_and_grad, train)
from .datagen import (DatasetManifest, ManifestRecord, MaskSpec,
                      build_dataset, gen_mask, render_truth)
from .config import RunConfig, load_run_config

__version__ = "0.1.0"
