from .qot_engine import ProtocolParams, SessionResult, SessionStatus, AbortReason, run_session, run_alice, run_bob
from .sim_optics import OpticalConfig
from .analysis import AnalysisParams, p_fpass, p_fcorrect, p_bypass, p_cheat, cheating_cost
from .oprf import IdealOt, QotOt, run_oprf
from .psi import PsiConfig, run_psi
