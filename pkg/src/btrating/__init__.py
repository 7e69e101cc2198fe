"""Ratings from comparison outcomes.

Classical Bradley-Terry tools (MM maximum likelihood, the Elo transform and
its incremental update) next to a shared-weight neural rating estimator that
learns to score unseen items from nothing but comparison results, including
comparisons staged under unfair conditions.
"""

from .btcore import (
    BTScores,
    EloConfig,
    FordError,
    HomeAdvantage,
    MatchMatrix,
    check_ford_condition,
    elo_rate_history,
    elo_update,
    home_win_prob,
    mm_mle,
    mm_mle_home,
    multiplayer_win_prob,
    pairwise_win_prob,
    pi_to_elo,
    rank_likelihood,
)
from .datagen import (
    DigitGenConfig,
    PlantedConfig,
    gen_digit_records,
    gen_planted_dataset,
    load_idx,
    pair_adjacent,
    read_dataset,
    write_dataset,
)
from .evaluate import (
    ClassStats,
    CorrelationReport,
    ablation_asymmetric,
    accuracy,
    class_stats,
    correlation,
    export_report,
    mle_baseline,
)
from .model import (
    ComparisonRecord,
    Dataset,
    RatingModel,
    TrainConfig,
    TrainReport,
    build_model,
    load_model,
    predict_probs,
    predict_ratings,
    rate_item,
    rate_items,
    save_model,
    train,
    win_prob_from_ratings,
)
from .nn import (
    AdamState,
    DenseNet,
    adam_step,
    backward,
    cross_entropy_loss,
    forward,
    gradcheck,
    init_net,
    softmax,
)

__version__ = "0.1.0"
