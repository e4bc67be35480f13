"""Sequential per-class fine-tuning and continual-learning baselines for
emotion classifiers, with a chained multi-dataset evaluation harness."""

from .continual import (
    FisherInfo,
    QuadraticPenalty,
    ReplayBuffer,
    StageLog,
    StrategyConfig,
    build_replay_buffer,
    estimate_fisher,
    ewc_finetune,
    replay_finetune,
    sequifi_finetune,
    vanilla_finetune,
    weight_average,
    weight_avg_finetune,
)
from .corpus import (
    LABELS,
    DatasetManifest,
    EmotionLabel,
    Sample,
    SynthSpec,
    class_subset,
    gen_synth,
    load_manifest,
    save_manifest,
    stratified_split,
)
from .errors import ConfigError, FeatureError, ManifestError, SequifiError
from .evalkit import (
    EvalMatrix,
    FoldPlan,
    Metrics,
    aggregate_folds,
    compute_metrics,
    make_fold_plan,
    run_chain,
)
from .features import (
    FeatureVector,
    MfccConfig,
    average_pool,
    compute_mfcc,
    ingest_embeddings,
    resample_to_16k,
)
from .netcore import (
    AdamState,
    Architecture,
    EmotionNetClassifier,
    NetworkParams,
    TrainConfig,
    adam_step,
    backward,
    forward,
    init_params,
    loss,
    predict_classes,
    predict_proba,
    train,
)

__version__ = "0.1.0"
