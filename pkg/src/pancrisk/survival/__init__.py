from .cox import (CollinearityError, ConvergenceError, CoxResult, CoxTerm, cox_fit, cox_workflow,
                  partial_loglik, univariate_cox)
from .loss import cox_nll
from .metrics import (KMCurve, RiskStratifier, c_index, cumulative_auc, kaplan_meier,
                      log_rank_test, stratify)
from .records import (DegenerateBatchError, SurvivalRecord, UndefinedMetricError, as_arrays,
                      make_records, read_cohort_csv, write_cohort_csv)
