#!/usr/bin/env python3
"""Regenerates the JSON fixtures under crates/ecodrive/data/.

The fuel map is a Willans-style surface: fuel power = friction power plus
indicated power at a load-dependent efficiency, divided by a lower heating
value of 43.5 kJ/g.
"""
import json
import os

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "ecodrive", "data")

LHV_J_PER_G = 43500.0


def fuel_rate(omega, torque):
    t_fric = 18.0 + 0.015 * omega
    if torque <= 0.0:
        return round(t_fric * omega / LHV_J_PER_G, 6)
    eta = 0.30 + 0.08 * min(torque / 90.0, 1.0)
    power = t_fric * omega + torque * omega / eta
    return round(power / LHV_J_PER_G, 6)


def plant():
    speed_axis = [60.0, 100.0, 140.0, 180.0, 220.0, 260.0, 300.0]
    torque_axis = [0.0, 25.0, 50.0, 75.0, 100.0, 125.0, 150.0]
    rates = [[fuel_rate(w, t) for t in torque_axis] for w in speed_axis]
    return {
        "mass_kg": 1600.0,
        "drag_area_coeff": 0.38,
        "rolling_coeff": 0.009,
        "wheel_radius_m": 0.32,
        "driveline_ratio": [
            [0.0, 14.0],
            [4.0, 11.0],
            [8.0, 8.0],
            [12.0, 6.0],
            [16.0, 4.8],
            [20.0, 3.8],
            [25.0, 3.2],
        ],
        "engine": {
            "torque_min_nm": [
                [0.0, -80.0],
                [4.0, -110.0],
                [8.0, -145.0],
                [12.0, -190.0],
                [16.0, -235.0],
                [20.0, -300.0],
                [25.0, -350.0],
            ],
            "torque_max_nm": [
                [0.0, 120.0],
                [2.0, 140.0],
                [5.0, 150.0],
                [20.0, 150.0],
                [25.0, 140.0],
            ],
            "fuel_map": {
                "speed_axis_rad_s": speed_axis,
                "torque_axis_nm": torque_axis,
                "rates_g_s": rates,
            },
        },
        "bsg": {
            "torque_min_nm": [
                [0.0, -45.0],
                [8.0, -45.0],
                [12.0, -38.0],
                [16.0, -32.0],
                [20.0, -27.0],
                [25.0, -24.0],
            ],
            "torque_max_nm": [
                [0.0, 45.0],
                [8.0, 45.0],
                [12.0, 38.0],
                [16.0, 32.0],
                [20.0, 27.0],
                [25.0, 24.0],
            ],
            "efficiency": 0.9,
        },
        "battery": {
            "capacity_as": 36000.0,
            "open_circuit_voltage_v": 48.0,
            "internal_resistance_ohm": 0.05,
            "soc_min": 0.3,
            "soc_max": 0.8,
        },
    }


def route_7km():
    return {
        "length_m": 7000.0,
        "distance_step_m": 10.0,
        "grade": [
            {"position_m": 0.0, "grade_rad": 0.0},
            {"position_m": 1500.0, "grade_rad": 0.012},
            {"position_m": 2100.0, "grade_rad": 0.0},
            {"position_m": 3800.0, "grade_rad": -0.01},
            {"position_m": 4500.0, "grade_rad": 0.0},
        ],
        "speed_limits": [
            {"position_m": 0.0, "v_min_ms": 0.0, "v_max_ms": 13.9},
            {"position_m": 2400.0, "v_min_ms": 0.0, "v_max_ms": 16.7},
            {"position_m": 5200.0, "v_min_ms": 0.0, "v_max_ms": 13.9},
        ],
        "intersections": [
            {
                "position_m": 1300.0,
                "spat": {"cycle_time_s": 60.0, "green_start_s": 0.0, "green_end_s": 32.0, "offset_s": 10.0},
            },
            {
                "position_m": 2000.0,
                "spat": {"cycle_time_s": 55.0, "green_start_s": 0.0, "green_end_s": 28.0, "offset_s": 25.0},
            },
            {
                "position_m": 2800.0,
                "spat": {"cycle_time_s": 60.0, "green_start_s": 0.0, "green_end_s": 30.0, "offset_s": 42.0},
            },
            {
                "position_m": 3600.0,
                "spat": {"cycle_time_s": 50.0, "green_start_s": 0.0, "green_end_s": 27.0, "offset_s": 8.0},
            },
            {
                "position_m": 5200.0,
                "spat": {"cycle_time_s": 60.0, "green_start_s": 0.0, "green_end_s": 33.0, "offset_s": 30.0},
            },
        ],
        "stop_signs_m": [4600.0],
    }


def route_short():
    return {
        "length_m": 1000.0,
        "distance_step_m": 10.0,
        "grade": [],
        "speed_limits": [
            {"position_m": 0.0, "v_min_ms": 0.0, "v_max_ms": 13.9},
        ],
        "intersections": [
            {
                "position_m": 500.0,
                "spat": {"cycle_time_s": 40.0, "green_start_s": 0.0, "green_end_s": 22.0, "offset_s": 5.0},
            },
        ],
        "stop_signs_m": [],
    }


SOLVER = {
    "horizon_steps": 20,
    "t_step_s": 1.0,
    "v_min_feasible_ms": 2.5,
    "soc_window": 0.04,
    "engine_torque_points": 9,
    "bsg_torque_points": 5,
}


def scenario(seed):
    return {
        "route_file": "route_7km.json",
        "plant_file": "plant_default.json",
        "model_file": "model_gru.json",
        "target": {
            "kind": "generate",
            "seed": seed,
            "departure_time_s": 0.0,
            "duration_s": 1200.0,
        },
        "departure_time_s": 15.0,
        "initial_speed_ms": 0.0,
        "initial_soc": 0.55,
        "solver": SOLVER,
        "replan_stride": 2,
        "max_wait_s": 120.0,
    }


def scenario_smoke():
    return {
        "route_file": "route_short.json",
        "plant_file": "plant_default.json",
        "predictor": "constant",
        "target": {
            "kind": "generate",
            "seed": 7,
            "departure_time_s": 0.0,
            "duration_s": 180.0,
        },
        "departure_time_s": 10.0,
        "initial_speed_ms": 0.0,
        "initial_soc": 0.55,
        "solver": dict(SOLVER, horizon_steps=15),
        "replan_stride": 2,
        "max_wait_s": 60.0,
    }


def scenario_empty_road():
    return {
        "route_file": "route_7km.json",
        "plant_file": "plant_default.json",
        "target": {"kind": "none"},
        "departure_time_s": 0.0,
        "initial_speed_ms": 0.0,
        "initial_soc": 0.55,
        "solver": SOLVER,
        "replan_stride": 2,
    }


def train_manifest():
    return {
        "route_file": "route_7km.json",
        "trajectories": [
            {"kind": "generate", "seed": s, "departure_time_s": 0.0, "duration_s": 900.0}
            for s in range(201, 209)
        ],
        "dsrc_range_m": 300.0,
        "history_len": 10,
        "horizon_len": 20,
        "hyperparams": {
            "hidden_dim": 16,
            "learning_rate": 0.002,
            "batch_size": 64,
            "max_epochs": 150,
            "patience": 12,
            "val_fraction": 0.2,
            "grad_clip_norm": 5.0,
        },
        "seed": 1,
        "model_file": "model_gru.json",
    }


def eval_manifest():
    return {
        "route_file": "route_7km.json",
        "trajectories": [
            {"kind": "generate", "seed": s, "departure_time_s": 0.0, "duration_s": 600.0}
            for s in range(211, 215)
        ],
        "dsrc_range_m": 300.0,
        "history_len": 10,
        "horizon_len": 20,
        "model_file": "model_gru.json",
    }


def main():
    files = {
        "plant_default.json": plant(),
        "route_7km.json": route_7km(),
        "route_short.json": route_short(),
        "scenario_smoke.json": scenario_smoke(),
        "scenario_empty_road.json": scenario_empty_road(),
        "train_manifest.json": train_manifest(),
        "eval_manifest.json": eval_manifest(),
    }
    for i, seed in enumerate(range(101, 106), start=1):
        files[f"scenario_{i:02d}.json"] = scenario(seed)
    os.makedirs(OUT, exist_ok=True)
    for name, data in files.items():
        path = os.path.join(OUT, name)
        with open(path, "w") as f:
            json.dump(data, f, indent=2)
            f.write("\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
