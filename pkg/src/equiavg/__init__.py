"""equiavg: test-time group averaging for autoregressive grid surrogates.

Wrap any windowed next-frame model so its predictions are averaged over a
symmetry group (exactly, or by Monte-Carlo sampling), and benchmark the
effect on rollout error against a self-generated reaction-diffusion dataset.
"""

from .averaging import (
    AveragedModel,
    AveragingConfig,
    EquivarianceReport,
    PersistenceModel,
    RolloutDivergenceError,
    RolloutResult,
    Surrogate,
    averaged_predict,
    check_equivariance,
    rollout,
)
from .fields import (
    ChannelGroup,
    FieldError,
    FieldSet,
    GridSpec,
    Trajectory,
    Window,
    load_trajectory,
    make_fieldset,
    make_schema,
    save_trajectory,
    slide_window,
    spatial_mean,
)
from .groups import (
    DihedralElement,
    GroupError,
    GroupSpec,
    ShiftElement,
    apply,
    apply_window,
    compose,
    elements,
    format_element,
    group_for_grid,
    identity,
    inverse,
    parse_element,
    sample,
)
from .metrics import LossRow, MetricConfig, evaluate_rollout, vrmse
from .simulate import (
    Dataset,
    GrayScottParams,
    InitialConditionSpec,
    SimulationError,
    generate_trajectory,
    gray_scott_step,
    load_dataset,
    make_dataset,
    sample_initial_state,
    stable_params,
)
from .stencil import (
    StencilModel,
    StencilModelConfig,
    TrainConfig,
    load_model,
    loss_and_gradient,
    save_model,
    train,
)

__version__ = "0.1.0"
