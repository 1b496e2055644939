"""Host-based detection of compromised substation devices from their call traces.

Genuine devices are profiled by how alike their repeated task runs are;
an unknown device is then checked stage by stage: call counts against the
profile, then positional correlation with a representative genuine run,
then windowed correlation when positional correlation is too noisy.
"""

from .detection import (CallVector, DetectionVerdict, DetectorConfig, Escalation, call_vector, detect,
                        detect_with_profile, ioc_advanced, ioc_simple)
from .errors import (ClassMismatch, DomainError, GridSentryError, LoadError, NoProfile, ParseError,
                     ProfileIncomplete, SessionError, UnknownCall)
from .evaluation import (ConfusionCounts, ExperimentPlan, MetricsReport, learn_profile, learn_profiles, metrics,
                         run_experiment, threshold_sweep)
from .learning import GroundTruthProfile, ProfileDatabase, Rejection, SigmaPolicy, build_gtp, lookup, replace, store
from .sim import SimConfig, ThreatScenario, poisson_pmf, run_session
from .stats import compute_ili, pearson, window_sums
from .traces import (CallEvent, CallHistogram, CallKind, CallTrace, DeviceClass, Source, Tier, WeightedSeries,
                     WeightScheme, histogram, read_trace, weigh, write_trace)

__version__ = "0.1.0"
