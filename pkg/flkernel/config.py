"""
Protocol constants and tuning defaults shared by every app
"""

# Wire protocol
WIRE_MAGIC = b"FL"
WIRE_VERSION = 1
WIRE_HEADER_SIZE = 12  # magic(2) + version(1) + msg_type(1) + payload_len(8)
MAX_FRAME_PAYLOAD = 1 << 30
DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 7070

# Client proxy behaviour
LONG_POLL_INTERVAL_SEC = 0.25
RETRY_BASE_SEC = 0.2
RETRY_FACTOR = 2
RETRY_MAX_ATTEMPTS = 5
SOCKET_TIMEOUT_SEC = 30.0

# Speed estimation
SPEED_EMA_BETA = 0.5

# Client data split
TEST_SPLIT_FRACTION = 0.2

# Secure aggregation
DEFAULT_FIXED_POINT_SCALE = 1 << 20
SECAGG_MAGNITUDE_BOUND = 1e6  # assumed max |coordinate| of an encoded model

# Binary artifacts
DATASET_MAGIC = b"FLDS"
DATASET_VERSION = 1
MODEL_MAGIC = b"FLMD"
MODEL_VERSION = 1

# Deployment server: how long to wait for clients to collect DONE
DONE_GRACE_SEC = 5.0
