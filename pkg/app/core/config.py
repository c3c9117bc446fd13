import os
import logging
from dotenv import load_dotenv

# Load .env from project root
try:
    load_dotenv(dotenv_path=os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".env")))
except Exception:
    try:
        load_dotenv()
    except Exception:
        pass

# Environment
LAB_THREADS = max(1, int(os.getenv("LAB_THREADS", str(os.cpu_count() or 1))))
LAB_OUTPUT_DIR = os.path.abspath(os.getenv("LAB_OUTPUT_DIR", "out"))
LAB_LOG_LEVEL = os.getenv("LAB_LOG_LEVEL", "INFO").strip().upper() or "INFO"

# Numerics
SEMINORM_MAX_NODES = int(os.getenv("LAB_SEMINORM_MAX_NODES", "10000"))
SEMINORM_SEED = int(os.getenv("LAB_SEMINORM_SEED", "0"))
NEWTON_MAX_ITER = int(os.getenv("LAB_NEWTON_MAX_ITER", "50"))
NEWTON_TOL = float(os.getenv("LAB_NEWTON_TOL", "1e-10"))

# Report schema
REPORT_SCHEMA_VERSION = 1

# Logging
logging.basicConfig(level=getattr(logging, LAB_LOG_LEVEL, logging.INFO), format="%(asctime)s | %(levelname)s | %(message)s")
logger = logging.getLogger("flowlab")

# Configs dir helper
CONFIGS_DIR = os.path.join(os.path.dirname(__file__), "..", "..", "configs")
CONFIGS_DIR = os.path.abspath(CONFIGS_DIR)
