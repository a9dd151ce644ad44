from .protocol import SelectionReport, evaluate_selection, template_features
from .scorers import (SCORER_KINDS, Scorer, laplacian_variance, rescale, score_blur, score_combination,
                      score_jpeg, score_random, score_table)
from .selection import (PairLabel, TemplateGroup, build_templates, make_pairs, read_pairs,
                        read_templates, select_best, select_templates, template_identities,
                        write_pairs, write_rows, write_templates)
from .verification import (DEFAULT_FPR_TARGETS, KFoldResult, VerificationReport, fpr_key,
                           kfold_accuracy, roc, tpr_at_fpr, verify_pairs)
