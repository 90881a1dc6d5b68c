from entrofit.models.params import (
    BlackScholes,
    Heston,
    MarketEnv,
    Model,
    SchobelZhu,
    VarianceGamma,
    charfn,
    make_model,
)

__all__ = ["BlackScholes", "Heston", "MarketEnv", "Model", "SchobelZhu", "VarianceGamma", "charfn", "make_model"]
