"""flowlik: likelihood-based inference for packet-level renewal models from
(possibly packet-thinned) NetFlow summaries.

The package covers the full validation loop: Bartlett-Lewis session
simulation and Bernoulli thinning, NetFlow aggregation, complete and
sub-sampled NetFlow likelihoods, maximum-likelihood and moments estimators,
Fisher-information session-size bounds, and trace-CSV ingestion.  Estimators
follow the scikit-learn fit/get_params protocol.
"""

from .models import (ConvolutionMode, ConvolutionPolicy, ExponentialModel,
                     GammaModel, LogNormalModel, PacketModel,
                     fenton_wilkinson_params, packet_model)
from .sizes import FlowSizePmf, empirical_pmf, zeta_pmf, zipf_pmf
from .simulate import (Flow, SessionConfig, collect_nontrivial, derive_rng,
                       generate_flow, generate_session, simulate_session,
                       thin_flow, thin_flow_fast)
from .netflow import (NetFlow, SampledNetFlow, SessionNetFlow, aggregate,
                      aggregate_sampled, session_netflow)
from .likelihood import (LikelihoodConfig, MixtureWeights,
                         brute_force_sampled_loglik, marginal_duration_logdensity,
                         mixture_weights, netflow_loglik,
                         restricted_sampled_loglik, sampled_netflow_loglik,
                         session_loglik)
from .estimators import (ConvergenceError, FitResult, InterRenewalMLE,
                         MomentEstimator, NetflowMLE, NetflowMomentEstimator,
                         OptimizerConfig, SampledNetflowMLE,
                         TwoStepLogNormalMLE)
from .efficiency import (EfficiencyRequest, InfoSummary, efficiency_bound,
                         marginal_fisher_info, n_min)
from .ingest import (IngestConfig, empirical_flow_size_pmf, read_netflow_csv,
                     read_trace, survival_curve, write_netflow_csv,
                     write_trace)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
