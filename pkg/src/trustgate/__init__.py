"""Trust-aware attribute-based access control on a simulated ledger."""
from .agents import AttributeAuthority, DataStorage, ServiceConsumer, ServiceProvider, decision_g
from .config import ScenarioConfig, load_config, parse_config
from .contracts import deploy
from .ledger import EventKind, Ledger
from .model import AccessRequest, AccessToken, Action, Attribute, AttributeSet, Context, Policy, attrs_satisfy
from .trs import RepParams, RepState, TrustParams, TrustState, rep_step, rep_value, trust_step, trust_value
from .world import World

__version__ = "0.1.0"
