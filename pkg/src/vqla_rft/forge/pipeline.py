from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Mapping

import httpx

from ..dataset import DatasetRecord, Stage
from .assemble import IdAllocator, compile_records
from .client import AuditLog, GenerationEndpointConfig, fetch_sub_answers
from .prompts import FrameAnnotation, build_prompt_pack


def forge_records(annotations: Iterable[FrameAnnotation], endpoint: GenerationEndpointConfig,
                  audit: AuditLog | str | Path | None = None, max_inflight: int = 4,
                  counts: Mapping[Stage | str, int] | None = None,
                  client: httpx.Client | None = None,
                  sleep: Callable[[float], None] = time.sleep) -> list[DatasetRecord]:
    """Build, fetch and assemble every annotation.

    Up to ``max_inflight`` packs are fetched concurrently.  Output order follows
    the input order regardless of which request finishes first.
    """
    if max_inflight < 1:
        raise ValueError("max_inflight must be >= 1")
    packs = [build_prompt_pack(a, counts=counts) for a in annotations]
    audit = audit if isinstance(audit, AuditLog) else AuditLog(audit)
    own = client is None
    client = client or httpx.Client()
    try:
        with ThreadPoolExecutor(max_workers=max_inflight) as pool:
            answer_sets = list(pool.map(
                lambda p: fetch_sub_answers(p, endpoint, audit, client, sleep), packs))
    finally:
        if own:
            client.close()

    ids = IdAllocator()
    records: list[DatasetRecord] = []
    for pack, answers in zip(packs, answer_sets):
        records += compile_records(answers, pack, ids)
    return records
