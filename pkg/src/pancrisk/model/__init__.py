from .config import DISTANCE_MODES, FUSION_MODES, ModelConfig
from .features import Batch, SubjectFeatures, collate, normalize_pair, subject_features
from .network import (CrossPhaseFusion, NeuralDistance, PhaseEncoder, PrognosticNet, StructureBranch,
                      TextureBlock, TextureBranch, partition, phase_mask, unpartition)
from .serialize import ParamFileError, decode_params, encode_params, load_params, save_params
from .training import FoldResult, TrainConfig, nested_cv, outer_folds, summarize, train_fold
