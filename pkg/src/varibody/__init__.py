"""Compositional neural-field body generator with diffusion-guided finetuning.

Part-based sinusoidal fields posed on a box skeleton are rendered
volumetrically, finetuned with score distillation under a strategic
fixed/fresh noise policy plus feature-space depth and adversarial losses, and
finally converted to an optimizable tetrahedral-grid mesh.
"""

from .body import (
    BodyParams,
    ParamDistributions,
    PartName,
    RegionName,
    SemanticRegion,
    Skeleton,
    camera_for_region,
    default_skeleton,
    pose_part_volumes,
    rewrite_prompt,
    sample_body_params,
    semantic_regions,
)
from .config import MeshConfig, RunConfig, load_config, save_config
from .errors import (
    CheckpointError,
    ParameterError,
    TrainingError,
    VaribodyError,
)
from .features import FeaturePyramid
from .fields import (
    GeneratorModel,
    RenderedView,
    draw_latent,
    extract_density_grid,
    query_field,
    render_view,
)
from .geometry import Camera, RigidTransform
from .guidance import (
    Corpus,
    DiffusionSchedule,
    ToyPrior,
    Vocabulary,
    cfg_noise,
    generate_corpus,
    img2img_refine,
    load_prior,
    save_prior,
    sds_grad,
    sds_proxy,
    train_toy_prior,
)
from .metrics import DiversityReport, diversity_score
from .tetmesh import (
    TetGrid,
    TexturedMesh,
    density_to_sdf,
    export_mesh,
    import_mesh,
    marching_tets,
    mesh_finetune_step,
    prepare_mesh_state,
    rasterize,
    run_mesh_finetune,
)
from .training import (
    Discriminator,
    NoiseSchedulePolicy,
    create_train_state,
    feature_depth_loss,
    finetune_step,
    gan_losses,
    load_generator,
    next_latent,
    pseudo_gt_depth,
    run_finetune,
    sample_views,
    total_loss,
)

__version__ = "0.1.0"
