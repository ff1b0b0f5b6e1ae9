"""Entity-aware adversarial attacks on a small relation classifier, with
integrated-gradients diagnosis of the resulting samples."""

from .attack import (
    AdversarialRecord,
    AttackBudget,
    hotflip,
    pwws,
    run_attack_campaign,
    similarity,
    textfooler,
)
from .attribution import (
    AttributionSet,
    SalienceProfile,
    completeness_gap,
    integrated_gradients,
    salience_scores,
)
from .corpus import (
    Instance,
    MarkedSequence,
    SynonymLexicon,
    Vocabulary,
    build_vocab,
    insert_markers,
    load_dataset,
    load_synonyms,
    strip_markers,
)
from .diagnosis import (
    CooccurrenceTable,
    EditOp,
    EditScript,
    SampleDiagnosis,
    align_tokens,
    build_cooccurrence,
    classify_sample,
    confidence_drop,
    detect_ood,
    diagnose_campaign,
    diagnose_record,
    perturbed_salience_pairs,
    salience_histogram,
    spurious_score,
)
from .model import (
    Classifier,
    EmbeddingMatrix,
    Prediction,
    TrainConfig,
    load_classifier,
    save_classifier,
    train,
)
from .report import CampaignStats, compute_stats, emit, success_rate_percent

__version__ = "0.1.0"
