import json
import logging
import threading
from collections import Counter, deque
from datetime import datetime
from typing import Dict, List


class LoggerService:
    """Structured log entries kept in a bounded history and forwarded to stdlib logging"""

    def __init__(self, max_logs=1000, name="adhominem"):
        self.logs = deque(maxlen=max_logs)
        self.logger = logging.getLogger(name)
        self.trace_id = None
        self.level_counts = Counter()
        self._lock = threading.Lock()

        self.level_map = {
            "DEBUG": logging.DEBUG,
            "INFO": logging.INFO,
            "WARNING": logging.WARNING,
            "ERROR": logging.ERROR,
            "STAGE": logging.INFO,   # pipeline stage boundaries
            "TRAIN": logging.INFO,   # epoch / fold progress
            "EM": logging.INFO       # EM and Gibbs iteration traces
        }

    def begin_run(self, trace_id: str):
        """Start a fresh history for one CLI run"""
        self.trace_id = trace_id
        self.logs.clear()
        self.level_counts.clear()

    def log(self, level: str, message: str, trace_id: str = None, context: Dict = None):
        entry = {
            "timestamp": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
            "level": level,
            "message": message,
            "trace_id": trace_id,
            "context": context or {}
        }
        with self._lock:
            self.logs.append(entry)
            self.level_counts[level] += 1

        text = f"[{level}] {message}"
        if trace_id:
            text += f" (run {trace_id})"
        self.logger.log(self.level_map.get(level, logging.INFO), text)

    def log_stage(self, name: str, detail: str = ""):
        """Record a pipeline stage boundary under the current run's trace id"""
        message = f"{name}: {detail}" if detail else name
        self.log("STAGE", message, self.trace_id, {"stage": name})

    def log_epoch(self, fold, epoch: int, loss: float, heldout_loss: float = None):
        message = f"fold {fold} epoch {epoch}: loss {loss:.6f}"
        if heldout_loss is not None:
            message += f", held-out {heldout_loss:.6f}"
        self.log("TRAIN", message, context={"fold": fold, "epoch": epoch, "loss": loss,
                                            "heldout_loss": heldout_loss})

    def log_iteration(self, kind: str, restart: int, iteration: int, objective: float):
        message = f"{kind} restart {restart} iteration {iteration}: objective {objective:.6f}"
        self.log("EM", message, context={"kind": kind, "restart": restart, "iteration": iteration,
                                         "objective": objective})

    def log_processing_progress(self, current_step: str, done: int, total: int):
        self.log("INFO", f"{current_step}: {done}/{total}",
                 context={"step": current_step, "done": done, "total": total})

    def get_logs(self, level_filter: str = None, limit: int = None) -> List[Dict]:
        logs = list(self.logs)
        if level_filter:
            logs = [entry for entry in logs if entry["level"] == level_filter]
        if limit:
            logs = logs[-limit:]
        return logs

    def get_log_stats(self) -> Dict:
        return {
            "total": sum(self.level_counts.values()),
            "by_level": dict(sorted(self.level_counts.items())),
        }

    def export_logs(self, filename: str, append: bool = False) -> str:
        """One JSON object per entry"""
        with open(filename, 'a' if append else 'w', encoding='utf-8', newline='\n') as f:
            for entry in self.get_logs():
                f.write(json.dumps(entry, ensure_ascii=False, sort_keys=True, default=str) + '\n')
        return filename
