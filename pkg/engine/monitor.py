import json
import logging
from pathlib import Path

import numpy as np

from engine.geometry import write_field_csv
from utils.helpers import manage_checkpoints, write_csv

logger = logging.getLogger(__name__)


class SolveMonitor:
    """Журнал итераций решателя: JSON, CSV для графиков, ротация чекпоинтов поля"""

    def __init__(self, log_dir="data/logs", run_name="solve", max_checkpoints=5, flush_every=25):
        self.logger = logging.getLogger(__name__)
        self.log_dir = Path(log_dir)
        self.run_name = run_name
        self.max_checkpoints = max_checkpoints
        self.flush_every = flush_every
        self.checkpoint_dir = self.log_dir / "checkpoints"

        try:
            self.log_dir.mkdir(exist_ok=True, parents=True)
            self.reset_logs()
            self.logger.info(f"Solve monitor initialized in {self.log_dir}")
        except Exception as e:
            self.logger.critical(f"Failed to initialize monitor: {str(e)}")
            raise

    def reset_logs(self):
        self.current_log = {"iteration": [], "energy": [], "residual": [], "tau": [], "clamped": []}

    def log_iteration(self, iteration, energy, residual, tau, clamped=0):
        try:
            self.current_log["iteration"].append(int(iteration))
            self.current_log["energy"].append(float(energy))
            self.current_log["residual"].append(float(residual))
            self.current_log["tau"].append(float(tau))
            self.current_log["clamped"].append(int(clamped))
            if self.flush_every and len(self.current_log["iteration"]) % self.flush_every == 0:
                self.save()
        except Exception as e:
            self.logger.error(f"Failed to log iteration {iteration}: {str(e)}", exc_info=True)
            raise

    def save(self):
        self._save_log()
        self._save_plot_data()

    def _save_log(self):
        with open(self.log_dir / f"{self.run_name}_log.json", "w") as f:
            json.dump(self.current_log, f, indent=2)

    def _save_plot_data(self):
        log = self.current_log
        write_csv(
            self.log_dir / f"{self.run_name}_progress.csv",
            [log["iteration"], log["energy"], log["residual"], log["tau"], log["clamped"]],
            ("iteration", "energy", "residual", "tau", "clamped"),
        )

    def checkpoint(self, field, iteration):
        path = self.checkpoint_dir / f"field_{self.run_name}_{int(iteration):06d}.csv"
        write_field_csv(field, path)
        manage_checkpoints(self.checkpoint_dir, prefix=f"field_{self.run_name}", max_keep=self.max_checkpoints)
        self.logger.debug(f"Checkpoint written: {path}")
        return path

    def get_best_iteration(self, metric="residual"):
        values = self.current_log.get(metric)
        if not values:
            return -1
        return int(self.current_log["iteration"][int(np.argmin(values))])
