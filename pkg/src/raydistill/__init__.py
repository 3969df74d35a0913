"""Ray-based cross-modal distillation on dense BEV feature grids.

The package splits into a small tensor foundation (`tensor`), ray geometry
(`geometry`), contrastive sample selection (`sampling`), the two ray-based
distillation losses with analytic gradients (`losses_rcd`, `losses_rwd`),
auxiliary losses (`losses_aux`), a synthetic scene simulator with
corruption operators (`simulator`), a toy training harness (`harness`),
finite-difference verification (`gradcheck`), and a CLI (`cli`).
"""

from .geometry import (ForegroundMask, ObjectBox, RayPartition,
                       bottom_center_origin, partition_rays,
                       rasterize_objects, ray_depth_truth)
from .harness import (MetricsRow, ResilienceReport, ResilienceRow,
                      StudentModel, TrainConfig, TrainingDiverged, depth_mae,
                      evaluate_resilience, forward, train)
from .losses_aux import (HeadOutputs, LossWeights, response_loss, src_loss,
                         total_loss)
from .losses_rcd import (LossResult, RcdConfig, rcd_loss, rcd_student_term,
                         rcd_teacher_term)
from .losses_rwd import (RayWeights, RwdConfig, RwdOutput, attention_map,
                         ray_kl, rwd_loss, weight_map, weighted_l1_loss)
from .sampling import (SampleEntry, SamplerConfig, SampleSet,
                       build_sample_set, draw_negatives, negative_probs,
                       region_pool)
from .simulator import (CORRUPTION_KINDS, CameraConfig, CorruptionSpec,
                        SceneRender, SceneSpec, corrupt, generate_scene,
                        load_scene, object_signature, render_camera,
                        render_scene, render_teacher, save_scene)
from .tensor import (FeatureMap, FormatError, ScalarGrid, channel_abs_mean,
                     load_grid, load_tensor, save_grid, save_tensor,
                     softmax_flat)

__version__ = "0.1.0"
