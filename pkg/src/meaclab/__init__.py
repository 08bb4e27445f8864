"""meaclab: a software-defined GNSS relay/replay attack testbed."""

from .signals import (
    IqBuffer,
    PrnCode,
    QuantizedBuffer,
    SatelliteSignalSpec,
    add_awgn,
    dequantize_iq,
    generate_ca_code,
    quantize_iq,
    synthesize_baseband,
)
from .geometry import (
    AntennaFeedPlan,
    EcefPosition,
    SatelliteOrbitSpec,
    Scene,
    doppler_of,
    geometric_range,
    render_antenna_feed,
    true_pseudorange,
)
from .wire import (
    DeliverySchedule,
    LinkModel,
    SampleFrame,
    StreamConfig,
    apply_congestion_episode,
    decode_frame,
    encode_frame,
    framed_data_rate,
    link_transmit,
    required_data_rate,
)

__version__ = "0.1.0"
