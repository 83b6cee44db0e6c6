"""capbias: audit image-captioning evaluation metrics for gender bias.

Template-generated caption pairs that differ only in the gender word make the
quantity of interest directly measurable: a sound metric must prefer the
caption whose gender matches the image. The package scores such pairs with
statistical and embedding-based metrics, classifies per-concept bias with
bootstrap significance tests, simulates reward-driven bias amplification in a
toy captioner, and renders the results as tables and figures.
"""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    CaptionTriple,
    Category,
    Concept,
    DEFAULT_LEXICON,
    Gender,
    Instance,
    Lexicon,
    build_manifest,
    read_manifest,
    render_captions,
    validate_manifest,
    write_manifest,
)
from .textnorm import stem, tokenize  # noqa: F401
from .ngram_metrics import (  # noqa: F401
    IdfTable,
    Metric,
    MetricScore,
    bleu4,
    build_idf,
    cider_d,
    meteor,
    rouge_l,
)
from .embed_score import (  # noqa: F401
    Embedding,
    EmbeddingStore,
    HybridScore,
    clipscore,
    hybrid,
    load_store,
    save_store_emb1,
    save_store_json,
)
from .audit import (  # noqa: F401
    AuditCell,
    BiasLabel,
    BiasVerdict,
    ScoreRecord,
    bootstrap_bias_test,
    cell_accuracy,
    cohen_kappa,
    summarize,
)
from .caption_analysis import (  # noqa: F401
    DEFAULT_GENDER_LEXICON,
    GenderCall,
    GenderLexicon,
    SystemOutput,
    compare_systems,
    correct_caption,
    detect_gender,
    gender_error_rate,
    label_image_gender,
)
from .correlation import JudgedPair, Judgment, correlate_metrics, kendall_tau_c  # noqa: F401
from .rl_sim import (  # noqa: F401
    Policy,
    RewardFn,
    TrainConfig,
    exact_gradient,
    evaluate_policy,
    make_reward,
    mrt_step,
    train,
)
