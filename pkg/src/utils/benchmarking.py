import time
from datetime import datetime
from functools import wraps
from typing import Dict, List


class BenchmarkTracker:
    """Track wall-clock durations of engine operations"""

    def __init__(self):
        self.metrics = []

    def record(self, component: str, operation: str, duration: float, metadata: Dict = None):
        """Record one timed call"""
        self.metrics.append({
            "timestamp": datetime.now().isoformat(),
            "component": component,
            "operation": operation,
            "duration_ms": round(duration * 1000, 3),
            "metadata": metadata or {},
        })

    def clear(self):
        self.metrics = []

    def get_summary(self) -> List[Dict]:
        """Count / total / min / max / average per (component, operation)"""
        summary = {}
        for metric in self.metrics:
            key = (metric["component"], metric["operation"])
            if key not in summary:
                summary[key] = {
                    "component": metric["component"],
                    "operation": metric["operation"],
                    "count": 0,
                    "total_ms": 0.0,
                    "min_ms": float("inf"),
                    "max_ms": 0.0,
                }
            entry = summary[key]
            entry["count"] += 1
            entry["total_ms"] += metric["duration_ms"]
            entry["min_ms"] = min(entry["min_ms"], metric["duration_ms"])
            entry["max_ms"] = max(entry["max_ms"], metric["duration_ms"])

        for entry in summary.values():
            entry["total_ms"] = round(entry["total_ms"], 3)
            entry["avg_ms"] = round(entry["total_ms"] / entry["count"], 3)

        return list(summary.values())


# Global tracker instance
tracker = BenchmarkTracker()


def benchmark(component: str, operation: str):
    """Decorator recording the duration of every call into the global tracker"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                tracker.record(component, operation, time.perf_counter() - start_time)
        return wrapper
    return decorator
