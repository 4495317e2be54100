"""Hypothesis strategies for telemetry envelopes."""
from hypothesis import strategies as st

from mdfhrc.transport.messages import FUNCTIONS, TelemetryMessage

num = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
pos = st.floats(0, 1e6, allow_nan=False, allow_infinity=False)
ms = st.integers(0, 10**9)
cells = st.sampled_from(["c1", "cell7", "pilot"])
functions = st.sampled_from(FUNCTIONS)


@st.composite
def raw_messages(draw):
    p = draw(st.integers(1, 4))
    k = draw(st.integers(1, 3))
    t = draw(ms)
    payload = {"pipeline": p, "sensor": k, "t_ms": t,
               "values": draw(st.lists(num, min_size=1, max_size=16))}
    return TelemetryMessage(f"edge/{draw(cells)}/{p}/{k}", t, "raw", payload)


@st.composite
def feature_messages(draw):
    p = draw(st.integers(1, 4))
    k = draw(st.integers(1, 3))
    t = draw(ms)
    payload = {"pipeline": p, "sensor": k, "t_ms": t, "mu": draw(num), "sigma": draw(pos),
               "zeta": draw(num), "kappa": draw(pos)}
    return TelemetryMessage(f"edge/{draw(cells)}/{p}/{k}", t, "feature", payload)


@st.composite
def grid_messages(draw):
    f = draw(functions)
    n = draw(st.integers(1, 3))
    t = draw(ms)
    row = st.lists(st.floats(0, 1), min_size=2, max_size=2)
    payload = {"t_ms": t, "function": f, "ingest_ms": draw(pos), "window": draw(ms),
               "pipelines": list(range(1, n + 1)),
               "channels": draw(st.lists(st.lists(row, min_size=2, max_size=2),
                                         min_size=n, max_size=n))}
    return TelemetryMessage(f"fused/{draw(cells)}/{f}", draw(pos), "grid", payload,
                            draw(st.none() | st.text("abc", min_size=1, max_size=4)),
                            draw(st.none() | st.integers(0, 10**6)))


@st.composite
def result_messages(draw):
    f = draw(functions)
    probs = draw(st.lists(st.floats(0, 1), min_size=1, max_size=8))
    payload = {"t_ms": draw(ms), "function": f, "label": draw(st.text(max_size=6)),
               "class_index": draw(st.integers(0, 7)), "probs": probs,
               "ingest_ms": draw(pos), "classified_ms": draw(pos)}
    return TelemetryMessage(f"cloud/{draw(cells)}/{f}", draw(pos), "result", payload)


@st.composite
def ssm_messages(draw):
    payload = {"t_ms": draw(ms), "d_m": draw(pos), "d_p_m": draw(pos),
               "mode": draw(st.sampled_from(["Run", "Slow", "ProtectiveStop"]))}
    return TelemetryMessage(f"cloud/{draw(cells)}/ssm", draw(pos), "ssm", payload)


@st.composite
def control_messages(draw):
    payload = {"function": draw(functions),
               "pipelines": draw(st.lists(st.integers(1, 4), max_size=4, unique=True))}
    return TelemetryMessage(f"control/{draw(cells)}", draw(pos), "control", payload)


any_message = st.one_of(raw_messages(), feature_messages(), grid_messages(),
                        result_messages(), ssm_messages(), control_messages())
