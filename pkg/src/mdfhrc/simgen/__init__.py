from .generators import (
    CsiScene,
    OutOfRange,
    Reflector,
    counting_scene,
    csi_samples,
    ir_frames,
    radar_spectra,
    sim_csi_frame,
    sim_ir_frame,
    sim_radar_frame,
    sim_thz_frame,
    sub_rng,
    thz_frames,
    worker_states,
)
from .runner import (
    ScenarioRun,
    calibration_arrays,
    generate_arrays,
    read_labels,
    run_scenario,
    scenario_sensors,
    window_labels,
    write_labels,
)
from .scenario import (
    COPRESENCE_CLASSES,
    EMPTY,
    MOTION_CLASSES,
    BadScenario,
    Scenario,
    landmark_sweep,
    load_scenario,
    shipped_scenario,
)

__all__ = [
    "CsiScene", "OutOfRange", "Reflector", "counting_scene", "csi_samples", "ir_frames",
    "radar_spectra", "sim_csi_frame", "sim_ir_frame", "sim_radar_frame", "sim_thz_frame",
    "sub_rng", "thz_frames", "worker_states", "ScenarioRun", "calibration_arrays",
    "generate_arrays", "read_labels", "run_scenario", "scenario_sensors", "window_labels",
    "write_labels", "COPRESENCE_CLASSES", "EMPTY", "MOTION_CLASSES", "BadScenario", "Scenario",
    "landmark_sweep", "load_scenario", "shipped_scenario",
]
