"""Incremental-gain-stability tools and stability-constrained imitation
learning for discrete-time control-affine systems."""

from .dynamics import (
    DynamicsSystem,
    PSystemSpec,
    Trajectory,
    closed_loop,
    make_contracting_example,
    make_lti,
    make_p_system,
    replay,
    rollout_closed,
    rollout_open,
    step,
)
from .learning import (
    AdamState,
    CMILeConfig,
    EpochRecord,
    StabilityPenalty,
    TrainConfig,
    adam_step,
    behavior_cloning,
    cerm,
    cmile,
    cmile_agg,
    dagger,
    empirical_loss,
    generalization_gap,
    loss_gradient,
)
from .linalg import (
    load_matrix_csv,
    lqr_gain,
    power_iteration_radius,
    save_matrix_csv,
    solve_dare,
    solve_discrete_lyapunov,
    spectral_radius,
)
from .policies import (
    AffinePolicy,
    LinearPolicy,
    MlpPolicy,
    demix_final,
    evaluate,
    grad_wrt_params,
    mix,
    random_mlp,
)
from .stability import (
    CertificationReport,
    IgsParams,
    IncLyapunov,
    build_robust_lqr_certificate,
    check_contraction_metric,
    check_igs_on_trajectories,
    check_lyapunov_decrement,
    contraction_igs_params,
    disc_bound_ics,
    disc_bound_inputs,
    discrepancy_sum,
    gronwall_bound,
    igs_from_lyapunov,
    imitation_loss,
    min_max_power,
    p_system_certificate,
    p_system_igs_params,
)

__version__ = "0.1.0"
