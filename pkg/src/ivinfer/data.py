"""Data ingestion and variable-role handling.

A :class:`DataSet` holds the observation blocks of the structural model

    y = X beta + W gamma + C alpha + D delta + noise,

where ``X``/``W`` are endogenous covariates (of interest / nuisance), ``C``/
``D`` are included exogenous covariates (nuisance / of interest), and ``Z``
are instruments. The included intercept is tracked as a flag and counted as
part of the exogenous nuisance block wherever degrees of freedom matter.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg

from ivinfer.exceptions import ConfigError, RankDeficiencyError
from ivinfer.linalg import proj

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ColSpec:
    """Fixed-width column: 1-based inclusive character range ``[from_, to]``."""

    name: str
    from_: int
    to: int

    def __post_init__(self):
        if self.from_ < 1 or self.to < self.from_:
            raise ConfigError(f"invalid column range ({self.from_}, {self.to}) for {self.name!r}.")


def read_fixed_width(path, spec, na_token="."):
    """Parse a fixed-width text file into a numeric table.

    Parameters
    ----------
    path: str or Path
        File to read.
    spec: list of ColSpec
        Non-overlapping field definitions with 1-based inclusive ranges.
    na_token: str
        Field content (after stripping blanks) that denotes a missing value.
        All-blank fields are also treated as missing.

    Returns
    -------
    pandas.DataFrame with one float column per spec entry.
    """
    taken = []
    for cs in sorted(spec, key=lambda c: c.from_):
        for other_name, lo, hi in taken:
            if cs.from_ <= hi and cs.to >= lo:
                raise ConfigError(
                    f"column {cs.name!r} ({cs.from_}, {cs.to}) overlaps {other_name!r} ({lo}, {hi})."
                )
        taken.append((cs.name, cs.from_, cs.to))

    columns = {cs.name: [] for cs in spec}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            for cs in spec:
                raw = line[cs.from_ - 1 : cs.to].strip()
                if raw == "" or raw == na_token:
                    columns[cs.name].append(np.nan)
                    continue
                try:
                    columns[cs.name].append(float(raw))
                except ValueError:
                    raise ValueError(
                        f"line {lineno}, column {cs.name!r}: cannot parse {raw!r} as a number."
                    ) from None
    return pd.DataFrame(columns)


# Field layout of the Card college-proximity extract (NLS young men, 1976
# cross-section), as distributed in its codebook.
CARD_COLSPEC = [
    ColSpec(*args)
    for args in [
        ("id", 1, 5), ("nearc2", 7, 7), ("nearc4", 10, 10), ("nearc4a", 12, 13),
        ("nearc4b", 15, 16), ("ed76", 18, 19), ("ed66", 21, 22), ("age76", 24, 25),
        ("daded", 27, 31), ("nodaded", 33, 33), ("momed", 35, 39), ("nomomed", 41, 41),
        ("weight", 43, 54), ("momdad14", 56, 56), ("sinmom14", 58, 58), ("step14", 60, 60),
        ("reg661", 62, 62), ("reg662", 64, 64), ("reg663", 66, 66), ("reg664", 68, 68),
        ("reg665", 70, 70), ("reg666", 72, 72), ("reg667", 74, 74), ("reg668", 76, 76),
        ("reg669", 78, 78), ("south66", 80, 80), ("work76", 82, 82), ("work78", 84, 84),
        ("lwage76", 86, 97), ("lwage78", 99, 110), ("famed", 112, 112), ("black", 114, 114),
        ("smsa76r", 116, 116), ("smsa78r", 118, 118), ("reg76r", 120, 120), ("reg78r", 122, 122),
        ("reg80r", 124, 124), ("smsa66r", 126, 126), ("wage76", 128, 132), ("wage78", 134, 138),
        ("wage80", 140, 144), ("noint78", 146, 146), ("noint80", 148, 148), ("enroll76", 150, 150),
        ("enroll78", 152, 152), ("enroll80", 154, 154), ("kww", 156, 157), ("iq", 159, 161),
        ("marsta76", 163, 163), ("marsta78", 165, 165), ("marsta80", 167, 167), ("libcrd14", 169, 169),
    ]
]

CARD_FAMILY = ["daded", "momed", "nodaded", "nomomed", "famed", "momdad14", "sinmom14"] + [
    f"f{i}" for i in range(1, 8)
]
CARD_INDICATORS = ["black", "smsa66r", "smsa76r", "reg76r"] + [f"reg66{i}" for i in range(1, 9)]
CARD_ENDOGENOUS = ["ed76", "exp76", "exp762"]
CARD_INSTRUMENTS = ["nearc4a", "nearc4b", "nearc2", "age76", "age762"]


def _as_block(table, names):
    if not names:
        return np.zeros((len(table), 0)), []
    missing = [c for c in names if c not in table.columns]
    if missing:
        raise ConfigError(f"columns not found in table: {missing}.")
    return table[list(names)].to_numpy(dtype=float), list(names)


@dataclass(frozen=True)
class DataSet:
    """Observation blocks with role labels.

    All blocks share the number of rows ``n``; entries must be finite. The
    instrument count (including exogenous covariates of interest ``D``, which
    also act as instruments for themselves) must weakly exceed the number of
    endogenous covariates.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    W: np.ndarray = None
    C: np.ndarray = None
    D: np.ndarray = None
    intercept: bool = True
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = y.shape[0]
        blocks = {}
        for label in ("X", "Z", "W", "C", "D"):
            val = getattr(self, label)
            if val is None:
                val = np.zeros((n, 0))
            val = np.asarray(val, dtype=float)
            if val.ndim == 1:
                val = val.reshape(-1, 1)
            if val.shape[0] != n:
                raise ConfigError(f"block {label} has {val.shape[0]} rows, expected {n}.")
            if not np.isfinite(val).all():
                raise ConfigError(f"block {label} contains non-finite entries.")
            blocks[label] = val
        if not np.isfinite(y).all():
            raise ConfigError("y contains non-finite entries.")
        if blocks["Z"].shape[1] < blocks["X"].shape[1] + blocks["W"].shape[1]:
            raise ConfigError(
                f"model requires at least as many instruments as endogenous covariates, "
                f"got k={blocks['Z'].shape[1]} < "
                f"{blocks['X'].shape[1] + blocks['W'].shape[1]}."
            )
        names = dict(self.names)
        for label in ("X", "Z", "W", "C", "D"):
            names.setdefault(label, [f"{label.lower()}{i}" for i in range(blocks[label].shape[1])])
            if len(names[label]) != blocks[label].shape[1]:
                raise ConfigError(f"{label} has {blocks[label].shape[1]} columns but "
                                  f"{len(names[label])} names.")
        names.setdefault("y", "y")
        flat = [c for label in ("X", "W", "C", "D", "Z") for c in names[label]]
        dupes = {c for c in flat if flat.count(c) > 1}
        if dupes:
            raise ConfigError(f"columns assigned to more than one role: {sorted(dupes)}.")
        object.__setattr__(self, "y", y)
        for label, val in blocks.items():
            object.__setattr__(self, label, val)
        object.__setattr__(self, "names", names)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def k(self):
        return self.Z.shape[1]

    @property
    def m_x(self):
        return self.X.shape[1]

    @property
    def m_w(self):
        return self.W.shape[1]

    @property
    def m_c(self):
        return self.C.shape[1]

    @property
    def m_d(self):
        return self.D.shape[1]

    def exog(self):
        """The exogenous nuisance block, with the intercept column appended."""
        if self.intercept:
            return np.column_stack([self.C, np.ones(self.n)])
        return self.C

    def replace(self, **kwargs):
        fields = dict(
            y=self.y, X=self.X, Z=self.Z, W=self.W, C=self.C, D=self.D,
            intercept=self.intercept, names=self.names,
        )
        fields.update(kwargs)
        return DataSet(**fields)


def assemble_dataset(table, y, x=(), w=(), c=(), d=(), z=(), intercept=True):
    """Build a :class:`DataSet` from a table and column-role assignments.

    Rows with missing values in any used column are dropped (with a logged
    count).
    """
    if isinstance(y, (list, tuple)):
        if len(y) != 1:
            raise ConfigError(f"y must be a single column, got {list(y)}.")
        y = y[0]
    roles = dict(x=list(x), w=list(w), c=list(c), d=list(d), z=list(z))
    used = [y] + [col for cols in roles.values() for col in cols]
    dupes = {col for col in used if used.count(col) > 1}
    if dupes:
        raise ConfigError(f"columns assigned to more than one role: {sorted(dupes)}.")
    missing = [col for col in used if col not in table.columns]
    if missing:
        raise ConfigError(f"columns not found in table: {missing}.")

    sub = table[used]
    keep = sub.notna().all(axis=1)
    if (~keep).any():
        logger.info("dropping %d rows with missing values in used columns", int((~keep).sum()))
    sub = sub[keep]

    blocks = {label.upper(): _as_block(sub, cols)[0] for label, cols in roles.items()}
    return DataSet(
        y=sub[y].to_numpy(dtype=float),
        X=blocks["X"], W=blocks["W"], C=blocks["C"], D=blocks["D"], Z=blocks["Z"],
        intercept=intercept,
        names={"y": y, **{label.upper(): cols for label, cols in roles.items()}},
    )


def build_card_dataset(table, x=None, w=None, d=None):
    """Derive the Card analysis dataset from the raw fixed-width table.

    Drops rows with a missing outcome, constructs potential experience and
    the squared terms, expands the parental-education class into indicator
    columns, and assigns the default roles: schooling, experience, and
    squared experience are endogenous; family-background and regional
    indicators are exogenous controls; college proximity, age, and squared
    age are instruments. Pass ``x``/``w``/``d`` to re-partition the defaults.

    Returns
    -------
    DataSet
    """
    df = table.copy()
    df = df[df["lwage76"].notna()]
    df["exp76"] = df["age76"] - df["ed76"] - 6
    df["exp762"] = df["exp76"] ** 2
    df["age762"] = df["age76"] ** 2
    for i in range(1, 8):
        df[f"f{i}"] = df["famed"].eq(i).astype(float)

    endog = list(CARD_ENDOGENOUS)
    exog = CARD_FAMILY + CARD_INDICATORS
    if x is None and w is None and d is None:
        x = endog
    x = list(x or [])
    w = list(w or [])
    d = list(d or [])
    for col in x + w:
        if col not in endog:
            raise ConfigError(f"{col!r} is not one of the endogenous columns {endog}.")
    for col in d:
        if col not in exog:
            raise ConfigError(f"{col!r} is not one of the exogenous columns.")
    rest_endog = [col for col in endog if col not in x + w]
    c = [col for col in exog if col not in d]
    return assemble_dataset(
        df, y="lwage76", x=x, w=w + rest_endog, c=c, d=d, z=CARD_INSTRUMENTS, intercept=True
    )


def load_card_dataset(path, **roles):
    """Read a fixed-width Card data file and build the analysis dataset."""
    return build_card_dataset(read_fixed_width(path, CARD_COLSPEC), **roles)


def _check_exog_rank(ce, names):
    if ce.shape[1] == 0:
        return
    _, rdiag, piv = scipy.linalg.qr(ce, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rdiag))
    rank = int(np.sum(diag > 1e-10 * diag[0])) if diag.size and diag[0] > 0 else 0
    if rank < ce.shape[1]:
        labeled = names + ["(intercept)"] * (ce.shape[1] - len(names))
        collinear = [labeled[i] for i in piv[rank:]]
        raise RankDeficiencyError(
            f"exogenous block is rank deficient; collinear columns: {collinear}."
        )


def residualize(ds):
    """Project the exogenous nuisance block (and intercept) out of all blocks.

    Returns a dataset whose ``y``, ``X``, ``W``, ``D``, and ``Z`` blocks are
    the residuals after regressing on ``[C, 1]``; ``C`` is emptied and the
    intercept flag cleared. A second application is a no-op.
    """
    ce = ds.exog()
    if ce.shape[1] == 0:
        return ds.replace(intercept=False)
    _check_exog_rank(ce, ds.names["C"])
    return ds.replace(
        y=oproj_block(ce, ds.y),
        X=oproj_block(ce, ds.X),
        W=oproj_block(ce, ds.W),
        D=oproj_block(ce, ds.D),
        Z=oproj_block(ce, ds.Z),
        C=np.zeros((ds.n, 0)),
        intercept=False,
        names={**ds.names, "C": []},
    )


def absorb_exogenous(ds):
    """Absorb ``C`` into the blocks but keep the intercept in the model.

    Like :func:`residualize`, but the column means of the original blocks are
    restored and the intercept flag stays set, so fits still report an
    intercept (relative to the original location of the data) and
    degrees-of-freedom bookkeeping counts one exogenous column. Statistics
    computed downstream are identical to passing ``C`` explicitly except that
    the absorbed columns no longer count toward residual degrees of freedom.
    """
    if ds.m_c == 0:
        return ds
    ce = ds.exog()
    _check_exog_rank(ce, ds.names["C"])

    def absorb(block):
        res = oproj_block(ce, block)
        return res + np.asarray(block, dtype=float).mean(axis=0)

    return ds.replace(
        y=absorb(ds.y), X=absorb(ds.X), W=absorb(ds.W), D=absorb(ds.D), Z=absorb(ds.Z),
        C=np.zeros((ds.n, 0)),
        names={**ds.names, "C": []},
    )


def oproj_block(basis, block):
    block = np.asarray(block, dtype=float)
    if block.size == 0:
        return block
    return block - proj(basis, block)
