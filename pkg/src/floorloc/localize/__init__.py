from .database import DatabaseError, GridDatabase, build_database, grid_poses, retrieve_nn
from .icp import ICPConfig, ICPError, grid_downsample, icp_align, icp_localize, plan_cloud
from .pipeline import (STAGE_PRESETS, LocalizationResult, PipelineConfig, PipelineError,
                       localize_full)
from .refine import (DecodeCost, FreeSpace, LatentCost, LPOConfig, MetricCost, RefineError,
                     decode_refine, latent_pose_optimize, optimize_pose, vdr_refine,
                     vogel_offsets, vogel_points)
