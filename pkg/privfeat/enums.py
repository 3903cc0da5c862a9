import enum


class FileFormat(str, enum.Enum):
    CSV = "csv"
    BINARY = "binary"


class OutputActivation(str, enum.Enum):
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


class LossKind(int, enum.Enum):
    UNKNOWN = 0
    # log D(priv) + log(1 - D(pub)), maximized
    DENSITY_RATIO = 1
    # D(real) - D(fake) + penalty, minimized
    CRITIC = 2


class GpStyle(str, enum.Enum):
    # norm of dD/dx at the real rows, weight 1
    REAL = "real"
    # (norm of dD/dx at random mixes - 1)^2, weight 10
    INTERPOLATED = "interpolated"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            return gp_style_aliases.get(value.strip().lower())
        return None


class Method(str, enum.Enum):
    DP_MGE = "dp-mge"
    DP_DRE = "dp-dre"
    DP_GAN_MI = "dp-gan-mi"
    DP_GAN_FT = "dp-gan-ft"
    UNIFORM_PUBLIC = "uniform-public"


class MetricName(str, enum.Enum):
    FID = "fid"
    PRD = "prd"
    NDB = "ndb"


class ReportFormat(str, enum.Enum):
    JSON = "json"
    CSV = "csv"


# "standard" is the usual name of the interpolated penalty
gp_style_aliases = {
    "standard": GpStyle.INTERPOLATED,
}

gan_methods = (
    Method.DP_GAN_MI,
    Method.DP_GAN_FT,
)

private_methods = (
    Method.DP_MGE,
    Method.DP_DRE,
    Method.DP_GAN_MI,
    Method.DP_GAN_FT,
)
