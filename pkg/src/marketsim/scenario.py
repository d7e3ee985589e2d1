"""Scenario ingestion and validation.

A scenario directory holds five required CSV files (simulation_task,
assets, market_rules, agent_strategies, fe_congestions) plus optional
control_states, imbalance_price_table, and unavailability files. Design
variable names are checked against the accepted vocabulary: unknown names
are schema errors, while names that exist in the design-variable matrix
but have no implementation are rejected with an explicit "recognized but
not implemented" diagnostic.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .balancing import ControlStateDistribution
from .clock import TimeStamp, add_mtus
from .errors import NotImplementedOptionError, ScenarioError, VocabularyError

MARKETS = ("DAM", "IDM", "RDM", "BEM", "IBM")

# design-variable vocabulary: name -> implemented?
ACQUISITION_METHODS = {
    "DAM": {"single_hourly_auction": True, "exo_default": False},
    "IDM": {"continuous": True, "continous_IDM": True},
    "RDM": {
        "cont_RDM_thinf": True,
        "cont_RDM_th0": True,
        "cont_RDM_th5": True,
        "cont_RDM_th50": True,
        "cont_RED_thinf": True,
        "cont_RED_th0": True,
        "cont_RED_th5": True,
        "cont_RED_th50": True,
    },
    "BEM": {"control_states_only": True},
    "IBM": {"realtime": True},
}
PRICING_METHODS = {
    "DAM": {"uniform": True},
    "IDM": {"best_price": True},
    "RDM": {"pay_as_bid": True},
    "BEM": {"none": True, "": True},
    "IBM": {"Dutch_IB_pricing": True, "fixed_single_price": True},
}
ORDER_TYPES = {
    "DAM": {"fill_or_kill": True},
    "IDM": {"limit_and_market": True, "limit_market_IDCONS": False},
    "RDM": {
        "all_or_none_ISP": True,
        "all_or_none_block": True,
        "limit_ISP": True,
        "limit_block": True,
        "IDCONS_orders": False,
    },
    "BEM": {"FRR": True, "mFRR": True, "aFRR": True},
    "IBM": {"na": True, "": True},
}
ACCREDITATION = {"all": True}

STRATEGY_VOCABULARY = {
    "DAM_timing": {"at_gate_closure": True},
    "DAM_quantity": {"all": True},
    "DAM_pricing": {"srmc": True},
    "IDM_timing": {"instant": True, "instantaneous": True},
    "IDM_quantity": {
        "random": True,
        "small_random": True,
        "all_operational": False,
        "all_operational_plus_conditional_startstop": False,
    },
    "IDM_pricing": {
        "srmc+-1": True,
        "marginal_orderbook_strategy": True,
        "marginal_orderbook_strategy_plus_startstop_plus_partialcall": False,
    },
    "RDM_timing": {"instant": True, "instantaneous": True},
    "RDM_quantity": {
        "all_plus_startstop": True,
        "all_operational": True,
        "small_random": False,
        "random": False,
        "not_offered_plus_startstop": False,
    },
    "RDM_pricing": {
        "srmc": True,
        "all_markup": True,
        "opportunity_markup": True,
        "ramping_markup": True,
        "startstop_markup": True,
        "double_score_markup": False,
        "partial_call_markup": False,
    },
    "BEM_timing": {"at_gate_closure": True},
    "BEM_quantity": {"available_ramp": True},
    "BEM_pricing": {"srmc": True},
    "IBM_timing": {"instant": True, "instantaneous": True, "impatience_curve": True},
    "IBM_quantity": {"all": True, "small_random": True, "random": True, "impatience_curve": True},
    "IBM_pricing": {
        "market_orders_strategy": True,
        "marginal_orderbook_strategy": True,
        "impatience_curve": True,
    },
}


@dataclass
class SimulationTask:
    start: TimeStamp
    number_steps: int
    seed: int
    forecast_errors: str = "exogenous"
    congestions: str = "exogenous"
    residual_load_pu: float = 0.85
    da_load_pu: float | None = None  # parsed, currently unused by the run

    def __post_init__(self):
        if self.number_steps < 1:
            raise ScenarioError("number_steps must be >= 1")
        if self.seed < 0:
            raise ScenarioError("seed must be a non-negative integer")


@dataclass
class AssetSpec:
    name: str
    owner: str
    pmax: float
    pmin: float
    location: str
    srmc: float
    asset_type: str = ""
    ramp_limit_up: float = 1.0
    ramp_limit_down: float = 1.0
    ramp_limit_start_up: float = 1.0
    ramp_limit_shut_down: float = 1.0
    min_up_time: int = 1
    min_down_time: int = 1
    start_up_cost: float = 0.0
    shut_down_cost: float = 0.0

    def __post_init__(self):
        if not 0 <= self.pmin <= self.pmax:
            raise ScenarioError(
                f"asset {self.name}: pmin {self.pmin} outside [0, pmax {self.pmax}]"
            )
        for label in ("ramp_limit_up", "ramp_limit_down", "ramp_limit_start_up", "ramp_limit_shut_down"):
            if getattr(self, label) <= 0:
                raise ScenarioError(f"asset {self.name}: {label} must be positive")


@dataclass
class MarketRules:
    market: str
    gate_opening_time: str
    gate_closure_time: str
    acquisition_method: str
    pricing_method: str
    order_types: str
    provider_accreditation: str = "all"
    pricing_parameter: float | None = None

    def validate(self):
        _check_vocab(ACQUISITION_METHODS[self.market], self.acquisition_method,
                     f"{self.market} acquisition_method")
        _check_vocab(PRICING_METHODS[self.market], self.pricing_method,
                     f"{self.market} pricing_method")
        _check_vocab(ORDER_TYPES[self.market], self.order_types,
                     f"{self.market} order_types")
        _check_vocab(ACCREDITATION, self.provider_accreditation,
                     f"{self.market} provider_accreditation")
        if self.market in ("DAM", "IDM", "RDM", "BEM"):
            probe = TimeStamp(3, 40)
            opening = parse_gate_spec(self.gate_opening_time, probe)
            closure = parse_gate_spec(self.gate_closure_time, probe)
            if not opening < closure:
                raise ScenarioError(
                    f"{self.market}: gate opening {self.gate_opening_time!r} not "
                    f"strictly before closure {self.gate_closure_time!r}"
                )


@dataclass
class AgentStrategyConfig:
    agent: str
    DAM_timing: str = "at_gate_closure"
    DAM_quantity: str = "all"
    DAM_pricing: str = "srmc"
    IDM_timing: str = "instant"
    IDM_quantity: str = "random"
    IDM_pricing: str = "marginal_orderbook_strategy"
    RDM_timing: str = "instant"
    RDM_quantity: str = "all_plus_startstop"
    RDM_pricing: str = "all_markup"
    BEM_timing: str = "at_gate_closure"
    BEM_quantity: str = "available_ramp"
    BEM_pricing: str = "srmc"
    IBM_timing: str = "impatience_curve"
    IBM_quantity: str = "impatience_curve"
    IBM_pricing: str = "impatience_curve"
    ramp_limits: bool = True
    start_stop_costs: bool = True
    min_up_down_time: bool = True

    def validate(self):
        for name, vocab in STRATEGY_VOCABULARY.items():
            _check_vocab(vocab, getattr(self, name), f"strategy {name} of {self.agent}")


@dataclass
class ForecastErrorRecord:
    identification: TimeStamp
    start: TimeStamp
    end: TimeStamp
    error_magnitude_pu: float
    agents: tuple[str, ...]


@dataclass
class CongestionRecord:
    identification: TimeStamp
    start: TimeStamp
    end: TimeStamp
    redispatch_quantity: float
    down_area: str
    up_area: str

    def __post_init__(self):
        if self.redispatch_quantity <= 0:
            raise ScenarioError("redispatch_quantity must be positive")
        if self.down_area == self.up_area:
            raise ScenarioError("congestion down_area equals up_area")


@dataclass
class Scenario:
    task: SimulationTask
    assets: list[AssetSpec]
    market_rules: dict[str, MarketRules]
    strategies: dict[str, AgentStrategyConfig]  # agent id (or 'All') -> config
    forecast_errors: list[ForecastErrorRecord] = field(default_factory=list)
    congestions: list[CongestionRecord] = field(default_factory=list)
    control_states: ControlStateDistribution | None = None
    imbalance_price_rows: list[tuple] = field(default_factory=list)
    unavailability: dict[tuple[str, int, int], float] = field(default_factory=dict)

    def agents(self) -> list[str]:
        """Market-party ids in scenario (asset file) order."""
        seen = []
        for a in self.assets:
            if a.owner not in seen:
                seen.append(a.owner)
        return seen

    def strategy_for(self, agent: str) -> AgentStrategyConfig:
        if agent in self.strategies:
            return self.strategies[agent]
        if "All" in self.strategies:
            return replace(self.strategies["All"], agent=agent)
        raise ScenarioError(f"no strategy configured for agent {agent}")

    def assets_of(self, agent: str) -> list[AssetSpec]:
        return [a for a in self.assets if a.owner == agent]


def _check_vocab(vocab: dict, value: str, where: str):
    if value not in vocab:
        raise VocabularyError(f"{where}: unknown option '{value}'")
    if not vocab[value]:
        raise NotImplementedOptionError(value, where)


_GATE_DAY_BEFORE = re.compile(r"^D-1,\s*MTU\s*(\d+)$")
_GATE_RELATIVE = re.compile(r"^(?:delivery)?MTU-(\d+)$")
_GATE_AT_DELIVERY = re.compile(r"^(?:delivery)?MTU$")


def parse_gate_spec(text: str, delivery: TimeStamp) -> TimeStamp:
    """Absolute gate time for a delivery period.

    'D-1, MTU k' is MTU k on the day before the delivery day; 'MTU-k' lies
    k MTUs ahead of the delivery MTU; 'MTU'/'deliveryMTU' is the delivery
    MTU itself.
    """
    text = text.strip()
    m = _GATE_DAY_BEFORE.match(text)
    if m:
        mtu = int(m.group(1))
        day = delivery.day - 1
        if day < 1:
            raise ScenarioError(
                f"gate '{text}' for delivery day {delivery.day} lies before day 1"
            )
        return TimeStamp(day, mtu)
    m = _GATE_RELATIVE.match(text)
    if m:
        return add_mtus(delivery, -int(m.group(1)))
    if _GATE_AT_DELIVERY.match(text):
        return delivery
    raise ScenarioError(f"cannot parse gate spec '{text}'")


def gate_is_open(rules: MarketRules, delivery: TimeStamp, now: TimeStamp) -> bool:
    """Whether orders for ``delivery`` are accepted at ``now``.

    The gate opens at the opening time and closes at (the beginning of)
    the closure time. Gates placed before day 1 count as always open.
    """
    try:
        opening = parse_gate_spec(rules.gate_opening_time, delivery)
        opened = now >= opening
    except ScenarioError:
        opened = True  # opening time predates the calendar
    closure = parse_gate_spec(rules.gate_closure_time, delivery)
    return opened and now < closure


# ---------------------------------------------------------------------------
# file parsing

REQUIRED_FILES = {
    "simulation_task": "simulation_task.csv",
    "assets": "assets.csv",
    "market_rules": "market_rules.csv",
    "agent_strategies": "agent_strategies.csv",
    "fe_congestions": "fe_congestions.csv",
}
OPTIONAL_FILES = {
    "control_states": "control_states.csv",
    "imbalance_price_table": "imbalance_price_table.csv",
    "unavailability": "unavailability.csv",
}


def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _cell(row: dict, column: str, path: Path, rownum: int, convert=str, required=True):
    raw = row.get(column)
    if raw is None or raw == "":
        if required:
            raise ScenarioError(f"{path.name} row {rownum}: missing column '{column}'")
        return None
    try:
        return convert(raw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(
            f"{path.name} row {rownum} column '{column}': bad value {raw!r} ({exc})"
        ) from exc


def _to_bool(raw: str) -> bool:
    if raw in ("True", "true", "1", "yes"):
        return True
    if raw in ("False", "false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def load_scenario(directory) -> Scenario:
    directory = Path(directory)
    if not directory.is_dir():
        raise ScenarioError(f"scenario directory {directory} does not exist")
    for key, fname in REQUIRED_FILES.items():
        if not (directory / fname).exists():
            raise ScenarioError(f"scenario is missing {fname}")

    # simulation task: long parameter/value format
    path = directory / REQUIRED_FILES["simulation_task"]
    params = {}
    for i, row in enumerate(_read_rows(path), start=2):
        key = _cell(row, "parameter", path, i)
        params[key] = _cell(row, "value", path, i)

    def param(name, convert=str, default=None, required=True):
        if name not in params:
            if required and default is None:
                raise ScenarioError(f"{path.name}: missing parameter '{name}'")
            return default
        try:
            return convert(params[name])
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{path.name}: bad value for '{name}' ({exc})") from exc

    task = SimulationTask(
        start=TimeStamp(param("start_day", int), param("start_mtu", int)),
        number_steps=param("number_steps", int),
        seed=param("seed", int),
        forecast_errors=param("forecast_errors", str, default="exogenous", required=False),
        congestions=param("congestions", str, default="exogenous", required=False),
        residual_load_pu=param("residual_load_pu", float, default=0.85, required=False),
        da_load_pu=param("da_load_pu", float, default=None, required=False),
    )

    path = directory / REQUIRED_FILES["assets"]
    assets = []
    for i, row in enumerate(_read_rows(path), start=2):
        assets.append(
            AssetSpec(
                name=_cell(row, "asset_name", path, i),
                owner=_cell(row, "asset_owner", path, i),
                asset_type=row.get("type", ""),
                pmax=_cell(row, "pmax", path, i, float),
                pmin=_cell(row, "pmin", path, i, float),
                location=_cell(row, "location", path, i),
                srmc=_cell(row, "srmc", path, i, float),
                ramp_limit_up=_cell(row, "ramp_limit_up", path, i, float),
                ramp_limit_down=_cell(row, "ramp_limit_down", path, i, float),
                ramp_limit_start_up=_cell(row, "ramp_limit_start_up", path, i, float),
                ramp_limit_shut_down=_cell(row, "ramp_limit_shut_down", path, i, float),
                min_up_time=_cell(row, "min_up_time", path, i, int),
                min_down_time=_cell(row, "min_down_time", path, i, int),
                start_up_cost=_cell(row, "start_up_cost", path, i, float),
                shut_down_cost=_cell(row, "shut_down_cost", path, i, float),
            )
        )
    if len({a.name for a in assets}) != len(assets):
        raise ScenarioError(f"{path.name}: duplicate asset names")

    path = directory / REQUIRED_FILES["market_rules"]
    market_rules = {}
    for i, row in enumerate(_read_rows(path), start=2):
        market = _cell(row, "market", path, i)
        if market not in MARKETS:
            raise ScenarioError(f"{path.name} row {i}: unknown market '{market}'")
        rules = MarketRules(
            market=market,
            gate_opening_time=_cell(row, "gate_opening_time", path, i),
            gate_closure_time=_cell(row, "gate_closure_time", path, i),
            acquisition_method=_cell(row, "acquisition_method", path, i),
            pricing_method=row.get("pricing_method", "") or "",
            order_types=row.get("order_types", "") or "",
            provider_accreditation=row.get("provider_accreditation", "all") or "all",
            pricing_parameter=_cell(row, "pricing_parameter", path, i, float, required=False),
        )
        rules.validate()
        market_rules[market] = rules
    missing = set(MARKETS) - set(market_rules)
    if missing:
        raise ScenarioError(f"{path.name}: missing market rules for {sorted(missing)}")

    path = directory / REQUIRED_FILES["agent_strategies"]
    strategies = {}
    strategy_fields = {f.name for f in fields(AgentStrategyConfig)} - {"agent"}
    for i, row in enumerate(_read_rows(path), start=2):
        agent = _cell(row, "agent", path, i)
        kwargs = {}
        for name in strategy_fields:
            raw = row.get(name)
            if raw in (None, ""):
                continue
            if name in ("ramp_limits", "start_stop_costs", "min_up_down_time"):
                kwargs[name] = _cell(row, name, path, i, _to_bool)
            else:
                kwargs[name] = raw.strip()
        config = AgentStrategyConfig(agent=agent, **kwargs)
        config.validate()
        strategies[agent] = config

    path = directory / REQUIRED_FILES["fe_congestions"]
    forecast_errors, congestions = [], []
    for i, row in enumerate(_read_rows(path), start=2):
        kind = _cell(row, "record_type", path, i)
        ident = TimeStamp(
            _cell(row, "identification_day", path, i, int),
            _cell(row, "identification_mtu", path, i, int),
        )
        start = TimeStamp(_cell(row, "start_day", path, i, int), _cell(row, "start_mtu", path, i, int))
        end = TimeStamp(_cell(row, "end_day", path, i, int), _cell(row, "end_mtu", path, i, int))
        if end < start:
            raise ScenarioError(f"{path.name} row {i}: window ends before it starts")
        if kind == "forecast_error":
            agents = tuple(
                a.strip()
                for a in _cell(row, "agents", path, i).split(";")
                if a.strip()
            )
            forecast_errors.append(
                ForecastErrorRecord(
                    identification=ident,
                    start=start,
                    end=end,
                    error_magnitude_pu=_cell(row, "error_magnitude_pu", path, i, float),
                    agents=agents,
                )
            )
        elif kind == "congestion":
            congestions.append(
                CongestionRecord(
                    identification=ident,
                    start=start,
                    end=end,
                    redispatch_quantity=_cell(row, "redispatch_quantity", path, i, float),
                    down_area=_cell(row, "down_area", path, i),
                    up_area=_cell(row, "up_area", path, i),
                )
            )
        else:
            raise ScenarioError(f"{path.name} row {i}: unknown record_type '{kind}'")

    control_states = None
    path = directory / OPTIONAL_FILES["control_states"]
    if path.exists():
        states, weights = [], []
        for i, row in enumerate(_read_rows(path), start=2):
            states.append(_cell(row, "state", path, i, int))
            weights.append(_cell(row, "weight", path, i, float))
        control_states = ControlStateDistribution(states, weights)

    imbalance_rows = []
    path = directory / OPTIONAL_FILES["imbalance_price_table"]
    if path.exists():
        for i, row in enumerate(_read_rows(path), start=2):
            imbalance_rows.append(
                (
                    _cell(row, "dam_bin_low", path, i, float),
                    _cell(row, "control_state", path, i, int),
                    _cell(row, "short_price", path, i, float),
                    _cell(row, "long_price", path, i, float),
                    _cell(row, "weight", path, i, float),
                )
            )

    unavailability = {}
    path = directory / OPTIONAL_FILES["unavailability"]
    if path.exists():
        for i, row in enumerate(_read_rows(path), start=2):
            key = (
                _cell(row, "asset_name", path, i),
                _cell(row, "day", path, i, int),
                _cell(row, "hour", path, i, int),
            )
            unavailability[key] = _cell(row, "p_max_pu", path, i, float)

    scenario = Scenario(
        task=task,
        assets=assets,
        market_rules=market_rules,
        strategies=strategies,
        forecast_errors=forecast_errors,
        congestions=congestions,
        control_states=control_states,
        imbalance_price_rows=imbalance_rows,
        unavailability=unavailability,
    )
    _cross_validate(scenario)
    return scenario


def _cross_validate(scenario: Scenario):
    agents = scenario.agents()
    for agent in agents:
        scenario.strategy_for(agent)  # raises when absent
    for fe in scenario.forecast_errors:
        for agent in fe.agents:
            if agent not in agents:
                raise ScenarioError(f"forecast error names unknown agent '{agent}'")
    areas = {a.location for a in scenario.assets}
    for c in scenario.congestions:
        if c.down_area not in areas or c.up_area not in areas:
            raise ScenarioError(
                f"congestion areas {c.down_area}/{c.up_area} not covered by any asset"
            )
    ibm = scenario.market_rules["IBM"]
    if ibm.pricing_method == "Dutch_IB_pricing" and not scenario.imbalance_price_rows:
        raise ScenarioError("Dutch_IB_pricing requires imbalance_price_table.csv")
    if ibm.pricing_method == "fixed_single_price" and ibm.pricing_parameter is None:
        raise ScenarioError("fixed_single_price requires pricing_parameter")
    bem = scenario.market_rules["BEM"]
    if bem.acquisition_method == "control_states_only" and scenario.control_states is None:
        raise ScenarioError("control_states_only requires control_states.csv")


def save_scenario(scenario: Scenario, directory) -> None:
    """Write a scenario back to CSV files (inverse of load_scenario)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def write(fname, header, rows):
        with open(directory / fname, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)

    t = scenario.task
    write(
        "simulation_task.csv",
        ["parameter", "value"],
        [
            ["start_day", t.start.day],
            ["start_mtu", t.start.mtu],
            ["number_steps", t.number_steps],
            ["seed", t.seed],
            ["forecast_errors", t.forecast_errors],
            ["congestions", t.congestions],
            ["residual_load_pu", t.residual_load_pu],
        ]
        + ([["da_load_pu", t.da_load_pu]] if t.da_load_pu is not None else []),
    )
    write(
        "assets.csv",
        [
            "asset_name", "asset_owner", "type", "pmax", "pmin", "location", "srmc",
            "ramp_limit_up", "ramp_limit_down", "ramp_limit_start_up",
            "ramp_limit_shut_down", "min_down_time", "min_up_time",
            "start_up_cost", "shut_down_cost",
        ],
        [
            [
                a.name, a.owner, a.asset_type, a.pmax, a.pmin, a.location, a.srmc,
                a.ramp_limit_up, a.ramp_limit_down, a.ramp_limit_start_up,
                a.ramp_limit_shut_down, a.min_down_time, a.min_up_time,
                a.start_up_cost, a.shut_down_cost,
            ]
            for a in scenario.assets
        ],
    )
    write(
        "market_rules.csv",
        [
            "market", "gate_opening_time", "gate_closure_time", "acquisition_method",
            "pricing_method", "order_types", "provider_accreditation", "pricing_parameter",
        ],
        [
            [
                r.market, r.gate_opening_time, r.gate_closure_time, r.acquisition_method,
                r.pricing_method, r.order_types, r.provider_accreditation,
                "" if r.pricing_parameter is None else r.pricing_parameter,
            ]
            for r in scenario.market_rules.values()
        ],
    )
    strat_fields = [f.name for f in fields(AgentStrategyConfig)]
    write(
        "agent_strategies.csv",
        strat_fields,
        [[getattr(s, f) for f in strat_fields] for s in scenario.strategies.values()],
    )
    rows = []
    for fe in scenario.forecast_errors:
        rows.append(
            [
                "forecast_error", fe.identification.day, fe.identification.mtu,
                fe.start.day, fe.start.mtu, fe.end.day, fe.end.mtu,
                fe.error_magnitude_pu, ";".join(fe.agents), "", "", "",
            ]
        )
    for c in scenario.congestions:
        rows.append(
            [
                "congestion", c.identification.day, c.identification.mtu,
                c.start.day, c.start.mtu, c.end.day, c.end.mtu,
                "", "", c.redispatch_quantity, c.down_area, c.up_area,
            ]
        )
    write(
        "fe_congestions.csv",
        [
            "record_type", "identification_day", "identification_mtu",
            "start_day", "start_mtu", "end_day", "end_mtu",
            "error_magnitude_pu", "agents", "redispatch_quantity",
            "down_area", "up_area",
        ],
        rows,
    )
    if scenario.control_states is not None:
        write(
            "control_states.csv",
            ["state", "weight"],
            list(zip(scenario.control_states.states, scenario.control_states.weights)),
        )
    if scenario.imbalance_price_rows:
        write(
            "imbalance_price_table.csv",
            ["dam_bin_low", "control_state", "short_price", "long_price", "weight"],
            scenario.imbalance_price_rows,
        )
    if scenario.unavailability:
        write(
            "unavailability.csv",
            ["asset_name", "day", "hour", "p_max_pu"],
            [[k[0], k[1], k[2], v] for k, v in scenario.unavailability.items()],
        )


def reference_scenario_path() -> Path:
    """Directory of the bundled reference scenario."""
    return Path(__file__).parent / "data" / "reference_scenario"
