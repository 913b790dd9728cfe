"""Mixed-integer model of target value controlled regulator networks."""

from .model import (  # noqa: F401
    IndicatorConstraint,
    LinearConstraint,
    MilpModel,
    ModelError,
    Sense,
    Variable,
)
from .combos import (  # noqa: F401
    ACTIVE_COMBOS,
    CLOSED_COMBOS,
    OPEN_COMBOS,
    CellStatus,
    Combo,
    ComboCatalog,
    Mode,
    check_combination,
    derived_open_closed,
    operation_value,
)
