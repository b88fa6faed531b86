"""Desk-scale simulator for federated LoRA fine-tuning on heterogeneous edge servers."""

from .config import CampaignConfig, parse_config
from .federation import Campaign, RoundReport, run_campaign
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "Campaign", "CampaignConfig", "RoundReport", "parse_config", "run_campaign"]
