from .losses import (LossError, log_ratio_all_pairs, loss_decode, loss_kd_lr, loss_l2,
                     loss_log_ratio, loss_log_ratio_cross)
from .model import (EMBED_DIM, INPUT_DIM, INPUT_SHAPE, EmbedError, EncoderParams, decode,
                    encode, init_params, load_params, preprocess, save_params)
from .training import (LayoutTrainConfig, PosePool, QueryTrainConfig, TrainingError, Triplet,
                       TripletBatch, build_pool, sample_triplets, train_layout_branch,
                       train_query_branch)
