import logging
import sys
from pathlib import Path

from dotenv import load_dotenv
from pydantic import ValidationError

from koopman_rds.config import get_settings
from koopman_rds.domain.enums import EXPERIMENT_ORDER
from koopman_rds.errors import KoopmanError, is_usage_error
from koopman_rds.services.experiments import default_config, run_experiment

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")


def main() -> int:
    load_dotenv()
    settings = get_settings()
    names = sys.argv[1:] or EXPERIMENT_ORDER
    out_root = Path(settings.OUTPUT_DIR)

    worst = 0
    summary = []
    for name in names:
        try:
            report = run_experiment(default_config(name), output_dir=out_root / name)
            code = 0 if report.passed else 1
        except ValidationError as e:
            logging.error(f"Invalid configuration for {name}: {e}")
            code = 2
        except KoopmanError as e:
            logging.error(f"{e}")
            code = 2 if is_usage_error(e) else 3
        summary.append((name, code))
        worst = max(worst, code)

    for name, code in summary:
        logging.info(f"{name:<24} exit {code}")
    passed = sum(c == 0 for _, c in summary)
    logging.info(f"Done. {passed} of {len(summary)} experiments passed.")
    return worst


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
