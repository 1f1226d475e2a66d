import threading
from queue import Queue, Empty
import logging
from typing import Any, Callable, Dict, List, Sequence, Tuple

logger = logging.getLogger("orbit_worker")


class OrbitWorkerPool:
    """
    Runs independent work items (orbit chunks, fiber matrix builds) on a set of
    daemon threads and hands the results back in item order.
    """
    def __init__(self, threads: int = 1):
        """
        Initializes the pool.

        Args:
            threads: Number of worker threads. With 1 the items run inline in
                the calling thread.
        """
        self.threads = max(1, int(threads))
        self.task_queue: 'Queue[Tuple[int, Any]]' = Queue()
        self.working = False
        self._stop_event = threading.Event()
        self._results_lock = threading.Lock()

    def map(self, fn: Callable[[Any], Any], items: Sequence[Any]) -> List[Any]:
        """
        Applies ``fn`` to every item and returns the results ordered like ``items``.

        The first exception raised by any item stops the remaining work and is
        re-raised here.
        """
        items = list(items)
        if self.threads == 1 or len(items) <= 1:
            return [fn(item) for item in items]

        self._stop_event.clear()
        results: Dict[int, Any] = {}
        failures: Dict[int, BaseException] = {}
        for index, item in enumerate(items):
            self.task_queue.put((index, item))

        workers = [threading.Thread(target=self._run_tasks, args=(fn, results, failures), daemon=True)
                   for _ in range(min(self.threads, len(items)))]
        self.working = True
        logger.info(f"Dispatching {len(items)} work items to {len(workers)} threads.")
        for worker in workers:
            worker.start()
        for worker in workers:
            worker.join()
        self.working = False

        if failures:
            first = min(failures)
            logger.error(f"Work item {first} failed: {failures[first]}")
            raise failures[first]
        return [results[i] for i in range(len(items))]

    def _run_tasks(self, fn: Callable[[Any], Any], results: Dict[int, Any],
                   failures: Dict[int, BaseException]) -> None:
        """
        The main loop of a worker thread. Pulls items until the queue is empty
        or another worker reported a failure.
        """
        while not self._stop_event.is_set():
            try:
                index, item = self.task_queue.get_nowait()
            except Empty:
                return
            try:
                value = fn(item)
            except Exception as e:
                with self._results_lock:
                    failures[index] = e
                self._stop_event.set()
                self._drain()
                return
            with self._results_lock:
                results[index] = value

    def _drain(self) -> None:
        while True:
            try:
                self.task_queue.get_nowait()
            except Empty:
                return

    def stop(self) -> None:
        """
        Abandons outstanding work items.
        """
        logger.info("Stopping orbit worker pool...")
        self._stop_event.set()
        self._drain()


def chunked(count: int, size: int) -> List[Tuple[int, int]]:
    """Splits ``range(count)`` into (start, stop) chunks of at most ``size``."""
    size = max(1, int(size))
    return [(start, min(start + size, count)) for start in range(0, count, size)]
