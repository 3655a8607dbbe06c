from .config import CloudConfig
from .orders import ErpStub, ErpUnavailable, OrderBook, OrderStatus, StateError
from .predict import CatalogEntry, FaultCatalog, NoDataError
from .retrain import RetrainError, retrain_model
from .rules import CepRule, RuleSet, RuleSource, box_jaccard
from .service import CloudService

__all__ = [
    "CloudConfig", "CloudService", "CepRule", "RuleSet", "RuleSource",
    "box_jaccard", "CatalogEntry", "FaultCatalog", "NoDataError",
    "OrderBook", "OrderStatus", "ErpStub", "ErpUnavailable", "StateError",
    "RetrainError", "retrain_model",
]
