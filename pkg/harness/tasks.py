import logging
import re
from functools import lru_cache
from typing import Dict, Optional, Tuple

from celery import shared_task
from django.conf import settings

from attack.config import AttackConfig
from classifier.transformer import ClassifierModel
from vocab.tokenizer import Vocabulary

from .artifacts import load_artifacts
from .evaluation import attack_record

logger = logging.getLogger(__name__)

_QUEUE_NAME_RE = re.compile(r"^[A-Za-z0-9_-]+$")


def _sanitize_queue_name(name: Optional[str], *, default: str) -> str:
    q = (name or "").strip()
    if not q or not _QUEUE_NAME_RE.match(q):
        return default
    return q


def select_attack_queue() -> str:
    return _sanitize_queue_name(getattr(settings, "ATTACK_QUEUE", None), default="attack")


@lru_cache(maxsize=4)
def _cached_artifacts(checkpoint: str, vocab_path: str) -> Tuple[ClassifierModel, Vocabulary]:
    logger.info("Worker loading checkpoint %s", checkpoint)
    return load_artifacts(checkpoint, vocab_path)


@shared_task(name=settings.ATTACK_TASK_NAME)
def attack_example(checkpoint: str, vocab_path: str, index: int, text: str, label: int, config: Dict) -> Dict:
    model, vocab = _cached_artifacts(checkpoint, vocab_path)
    record = attack_record(model, vocab, index, text, label, AttackConfig.from_dict(config))
    return record.to_dict()
