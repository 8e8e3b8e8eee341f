#!/usr/bin/env python3
"""Regenerates the graph and scenario fixtures in this directory."""

import json
from pathlib import Path

HERE = Path(__file__).resolve().parent

IMAGE = "sensor_msgs/Image"
TWIST = "geometry_msgs/Twist"
F64 = "std_msgs/Float64"
U8 = "std_msgs/UInt8"
ODOM = "nav_msgs/Odometry"
POSE = "geometry_msgs/PoseStamped"
AUDIO = "audio_common_msgs/AudioData"


class Graph:
    def __init__(self, name):
        self.name = name
        self.topics = {}
        self.nodes = {}

    def topic(self, name, ty, tags=None):
        if name in self.topics:
            assert self.topics[name]["type"] == ty, name
            return
        t = {"name": name, "type": ty}
        if tags:
            t["tags"] = tags
        self.topics[name] = t

    def node(self, name, pub=(), sub=(), domain=None, behavior=None):
        n = self.nodes.setdefault(name, {"name": name, "pub": [], "sub": []})
        for t in pub:
            if t not in n["pub"]:
                n["pub"].append(t)
        for t in sub:
            if t not in n["sub"]:
                n["sub"].append(t)
        if domain:
            n["domain"] = domain
        if behavior:
            n["behavior"] = behavior
        return n

    def doc(self):
        for n in self.nodes.values():
            for t in n["pub"] + n["sub"]:
                assert t in self.topics, (n["name"], t)
        return {
            "name": self.name,
            "topics": list(self.topics.values()),
            "nodes": list(self.nodes.values()),
        }


def write(name, doc):
    (HERE / name).write_text(json.dumps(doc, indent=2) + "\n")


def twist(lin_x, ang_z):
    return {"twist": {"linear": {"x": lin_x}, "angular": {"z": ang_z}}}


def pose(x, y):
    return {"pose": {"position": {"x": x, "y": y}}}


def periodic(rate, payload, topic=None, start=0.0, jitter=0.0):
    b = {"kind": "periodic_publisher", "rate_hz": rate, "payload": payload, "start": start}
    if topic:
        b["topic"] = topic
    if jitter:
        b["jitter"] = jitter
    return b


def home_findings():
    g = Graph("home-findings")
    for t, ty in [
        ("/cmd_vel", TWIST),
        ("/camera/depth/image_raw", IMAGE),
        ("/camera/rgb/image_raw", IMAGE),
        ("/objects", "std_msgs/Float32MultiArray"),
        ("/odom", ODOM),
        ("/rosbot_audio/audio", AUDIO),
    ]:
        g.topic(t, ty)
    g.node("/gazebo", pub=["/camera/depth/image_raw", "/camera/rgb/image_raw", "/odom"], sub=["/cmd_vel"])
    g.node("/move_base", pub=["/cmd_vel"], sub=["/odom"], domain="planning")
    g.node("/teleop_twist_keyboard", pub=["/cmd_vel"], domain="control")
    g.node(
        "/find_object_3d",
        pub=["/objects"],
        sub=["/camera/depth/image_raw", "/camera/rgb/image_raw"],
        domain="perception",
    )
    g.node("/search_manager", sub=["/objects"])
    g.node("/rosbot_tts", pub=["/rosbot_audio/audio"], domain="control")
    g.node("/rosbot_audio", sub=["/rosbot_audio/audio"], domain="driver")
    return g.doc()


def autorace_findings():
    g = Graph("autorace-findings")
    for t, ty in [
        ("/camera/image_compensated", IMAGE),
        ("/detect/traffic_sign", U8),
        ("/detect/lane", F64),
        ("/control/max_vel", F64),
        ("/detect/tunnel_stamped", U8),
        ("/move_base_simple/goal", POSE),
        ("/cmd_vel", TWIST),
    ]:
        g.topic(t, ty)
    g.node("/camera", pub=["/camera/image_compensated"], domain="driver")
    g.node("/detect_sign", pub=["/detect/traffic_sign"], sub=["/camera/image_compensated"], domain="perception")
    g.node("/core_mode_decider", sub=["/detect/traffic_sign"], domain="planning")
    g.node("/detect_lane", pub=["/detect/lane"], domain="perception")
    g.node("/detect_traffic_light", pub=["/control/max_vel"], domain="perception")
    g.node("/detect_parking", pub=["/control/max_vel"], domain="perception")
    g.node("/control_lane", pub=["/cmd_vel"], sub=["/detect/lane", "/control/max_vel"], domain="control")
    g.node(
        "/detect_tunnel",
        pub=["/move_base_simple/goal", "/detect/tunnel_stamped", "/cmd_vel"],
        domain="perception",
    )
    g.node("/rviz", pub=["/move_base_simple/goal"])
    g.node("/move_base", sub=["/move_base_simple/goal"], domain="planning")
    g.node("/core_node_controller", sub=["/detect/tunnel_stamped"], domain="planning")
    g.node("/gazebo", sub=["/cmd_vel"], domain="driver")
    return g.doc()


def home():
    """Home-scale app: 21 nodes, 125 topics.

    Risky structure: GR_ST on /cmd_vel, /tf and /move_base/cancel; GR_MT
    groups on the camera pair, the costmap footprints, the action status
    pair and tf/tf_static; two image recognisers; event topic /odom; action
    topics /cmd_vel and /audio/audio. Everything else is single-publisher
    with distinct types per subscriber.
    """
    g = Graph("home")
    g.topic("/rosout", "rosgraph_msgs/Log", ["log"])
    g.topic("/rosout_agg", "rosgraph_msgs/Log", ["log"])
    g.topic("/clock", "rosgraph_msgs/Clock")
    g.topic("/tf", "tf2_msgs/TFMessage")
    g.topic("/tf_static", "tf2_msgs/TFMessage")
    g.topic("/cmd_vel", TWIST)
    g.topic("/odom", ODOM)
    g.topic("/scan", "sensor_msgs/LaserScan")
    g.topic("/imu", "sensor_msgs/Imu")
    g.topic("/joint_states", "sensor_msgs/JointState")
    g.topic("/camera/rgb/image_raw", IMAGE)
    g.topic("/camera/depth/image_raw", IMAGE)
    g.topic("/camera/rgb/camera_info", "sensor_msgs/CameraInfo")
    g.topic("/camera/depth/points", "sensor_msgs/PointCloud2")
    g.topic("/map", "nav_msgs/OccupancyGrid")
    g.topic("/map_metadata", "nav_msgs/MapMetaData")
    g.topic("/move_base/global_costmap/footprint", "geometry_msgs/PolygonStamped")
    g.topic("/move_base/local_costmap/footprint", "geometry_msgs/PolygonStamped")
    g.topic("/move_base/global_costmap/costmap", "nav_msgs/OccupancyGrid")
    g.topic("/move_base/local_costmap/costmap", "nav_msgs/OccupancyGrid")
    g.topic("/move_base/status", "actionlib_msgs/GoalStatusArray")
    g.topic("/explore_server/status", "actionlib_msgs/GoalStatusArray")
    g.topic("/move_base/cancel", "actionlib_msgs/GoalID")
    g.topic("/move_base/NavfnROS/plan", "nav_msgs/Path")
    g.topic("/move_base/DWAPlannerROS/local_plan", "nav_msgs/Path")
    g.topic("/objects", "std_msgs/Float32MultiArray")
    g.topic("/person_detector/detections", "vision_msgs/Detection2DArray")
    g.topic("/audio/audio", AUDIO)
    g.topic("/tts/phrase", "std_msgs/String")
    g.topic("/speech/transcript", "std_msgs/String")
    g.topic("/search_manager/state", "std_msgs/UInt8")
    g.topic("/amcl_pose", "geometry_msgs/PoseWithCovarianceStamped")
    g.topic("/particlecloud", "geometry_msgs/PoseArray")
    g.topic("/explore/frontiers", "visualization_msgs/MarkerArray", ["visualization"])
    g.topic("/battery_voltage", "std_msgs/Float32")
    g.topic("/diagnostics", "diagnostic_msgs/DiagnosticArray")
    g.topic("/slam_gmapping/entropy", "std_msgs/Float64")

    names = [
        "/gazebo",
        "/robot_state_publisher",
        "/move_base",
        "/teleop_twist_keyboard",
        "/amcl",
        "/map_server",
        "/slam_gmapping",
        "/explore_server",
        "/find_object_3d",
        "/person_detector",
        "/search_manager",
        "/rosbot_tts",
        "/rosbot_audio",
        "/speech_recognizer",
        "/conversation_manager",
        "/laser_filter",
        "/imu_filter",
        "/camera_manager",
        "/battery_monitor",
        "/diagnostic_aggregator",
        "/rviz",
    ]
    for n in names:
        g.node(n, pub=["/rosout"])
    g.node("/diagnostic_aggregator", sub=["/diagnostics"])

    g.node(
        "/gazebo",
        pub=[
            "/clock",
            "/odom",
            "/scan",
            "/imu",
            "/joint_states",
            "/camera/rgb/image_raw",
            "/camera/depth/image_raw",
            "/camera/rgb/camera_info",
            "/camera/depth/points",
            "/tf",
        ],
        sub=["/cmd_vel"],
        domain="driver",
    )
    g.node("/robot_state_publisher", pub=["/tf", "/tf_static"], sub=["/joint_states"], domain="other")
    g.node(
        "/move_base",
        pub=[
            "/cmd_vel",
            "/move_base/status",
            "/move_base/global_costmap/footprint",
            "/move_base/local_costmap/footprint",
            "/move_base/global_costmap/costmap",
            "/move_base/local_costmap/costmap",
            "/move_base/NavfnROS/plan",
            "/move_base/DWAPlannerROS/local_plan",
        ],
        sub=["/odom", "/scan", "/map", "/move_base/cancel", "/tf", "/tf_static"],
        domain="planning",
    )
    g.node("/teleop_twist_keyboard", pub=["/cmd_vel"], domain="control")
    g.node(
        "/amcl",
        pub=["/amcl_pose", "/particlecloud", "/tf"],
        sub=["/scan", "/map"],
        domain="perception",
    )
    g.node("/map_server", pub=["/map_metadata"], domain="perception")
    g.node("/slam_gmapping", pub=["/map", "/slam_gmapping/entropy"], sub=["/scan"], domain="perception")
    g.node(
        "/explore_server",
        pub=["/explore_server/status", "/explore/frontiers", "/move_base/cancel"],
        sub=["/map", "/move_base/global_costmap/footprint", "/move_base/local_costmap/footprint"],
        domain="planning",
    )
    g.node(
        "/find_object_3d",
        pub=["/objects"],
        sub=["/camera/rgb/image_raw", "/camera/depth/image_raw"],
        domain="perception",
    )
    g.node(
        "/person_detector",
        pub=["/person_detector/detections"],
        sub=["/camera/rgb/image_raw", "/camera/rgb/camera_info"],
        domain="perception",
    )
    g.node(
        "/search_manager",
        pub=["/search_manager/state", "/tts/phrase", "/move_base/cancel"],
        sub=["/objects", "/person_detector/detections", "/move_base/status", "/explore_server/status"],
        domain="planning",
    )
    g.node("/rosbot_tts", pub=["/audio/audio"], sub=["/tts/phrase"], domain="control")
    g.node("/rosbot_audio", sub=["/audio/audio"], domain="driver")
    g.node("/speech_recognizer", pub=["/speech/transcript"], domain="perception")
    g.node("/conversation_manager", sub=["/speech/transcript", "/search_manager/state"], domain="planning")
    g.node("/laser_filter", sub=["/scan"], domain="perception")
    g.node("/imu_filter", sub=["/imu"], domain="perception")
    g.node("/camera_manager", sub=["/camera/depth/points"], domain="perception")
    g.node("/battery_monitor", pub=["/battery_voltage", "/diagnostics"], domain="other")
    g.node(
        "/rviz",
        sub=[
            "/particlecloud",
            "/amcl_pose",
            "/explore/frontiers",
            "/move_base/NavfnROS/plan",
            "/map_metadata",
        ],
    )

    # Reconfigure and bond topics, one publisher each, no subscribers.
    extras = [
        ("/move_base", ["global_costmap", "local_costmap", "NavfnROS", "DWAPlannerROS", "global_costmap/inflation_layer",
                        "global_costmap/obstacle_layer", "local_costmap/inflation_layer", "local_costmap/obstacle_layer",
                        "global_costmap/static_layer", "local_costmap/static_layer"]),
        ("/amcl", ["", "laser_model"]),
        ("/slam_gmapping", [""]),
        ("/explore_server", ["", "explore_costmap"]),
        ("/search_manager", [""]),
        ("/laser_filter", ["", "range", "angle", "median", "shadows"]),
        ("/imu_filter", [""]),
        ("/camera_manager", ["", "rgb", "depth", "driver", "depth_registered", "ir"]),
        ("/gazebo", ["", "physics", "camera", "depth_camera", "lidar", "imu_plugin", "wheel_left", "wheel_right"]),
        ("/rosbot_audio", [""]),
        ("/speech_recognizer", ["", "vad", "decoder", "frontend"]),
        ("/conversation_manager", [""]),
    ]
    for node, prefixes in extras:
        for p in prefixes:
            base = f"{node}/{p}".rstrip("/")
            for leaf, ty in [
                ("parameter_descriptions", "dynamic_reconfigure/ConfigDescription"),
                ("parameter_updates", "dynamic_reconfigure/Config"),
            ]:
                t = f"{base}/{leaf}"
                g.topic(t, ty)
                g.node(node, pub=[t])

    # Action-server feedback channels of the navigation stack.
    for server in ["/move_base", "/explore_server"]:
        for leaf, ty in [
            ("feedback", "move_base_msgs/MoveBaseActionFeedback"),
            ("result", "move_base_msgs/MoveBaseActionResult"),
        ]:
            t = f"{server}/{leaf}"
            g.topic(t, ty)
            g.node(server, pub=[t])

    doc = g.doc()
    return doc


def gr_attack():
    g = Graph("gr-attack")
    g.topic("/cmd_vel", TWIST)
    g.topic("/odom", ODOM)
    g.node("/gazebo", pub=["/odom"], sub=["/cmd_vel"], domain="driver", behavior=periodic(10.0, pose(0.0, 0.0)))
    g.node(
        "/move_base",
        pub=["/cmd_vel"],
        sub=["/odom"],
        domain="planning",
        behavior=periodic(10.0, twist(0.2, 0.0), start=0.05, jitter=0.01),
    )
    g.node("/tb3_safe_control", pub=["/cmd_vel"], domain="control")
    write("gr_attack_graph.json", g.doc())
    return {
        "name": "gr-attack",
        "graph": "gr_attack_graph.json",
        "duration": 4.0,
        "seed": 7,
        "instrument": True,
        "flags": ["host_match"],
        "attacks": [
            {
                "node": "/tb3_safe_control",
                "gate": "host_match",
                "actions": [
                    {"at": 1.0, "topic": "/cmd_vel", "payload": twist(0.0, -0.2), "repeat_every": 0.1, "until": 3.5}
                ],
            }
        ],
        "policies": [
            {
                "cn": {"type": "GRCN", "topic": "/cmd_vel"},
                "config": {
                    "policy": "Preemption",
                    "params": {"priority": {"/move_base": 0, "/tb3_safe_control": 10}},
                },
            }
        ],
        "assertions": [
            {
                "kind": "never_delivered",
                "id": "no_turn_right",
                "topic": "/cmd_vel",
                "to": "/gazebo",
                "predicate": {"compare": {"field": "angular.z", "op": "<", "value": -0.1}},
            },
            {
                "kind": "eventually",
                "id": "planner_drives",
                "topic": "/cmd_vel",
                "to": "/gazebo",
                "predicate": {"compare": {"field": "linear.x", "op": ">", "value": 0.1}},
            },
        ],
    }


def rsr_attack():
    g = Graph("rsr-attack")
    g.topic("/camera/image_compensated", IMAGE)
    g.topic("/detect/traffic_sign", U8)
    g.topic("/control/max_vel", F64)
    g.topic("/cmd_vel", TWIST)
    g.node(
        "/camera",
        pub=["/camera/image_compensated"],
        domain="driver",
        behavior=periodic(15.0, {"token": "frame"}),
    )
    g.node(
        "/detect_sign",
        pub=["/detect/traffic_sign"],
        sub=["/camera/image_compensated"],
        domain="perception",
        behavior={"kind": "reactive_transform", "latency": 0.02, "payload": {"scalar": 1.0}},
    )
    g.node("/core_mode_decider", sub=["/detect/traffic_sign"], domain="planning")
    g.node(
        "/detect_parking",
        pub=["/control/max_vel"],
        domain="perception",
        behavior=periodic(5.0, {"scalar": 0.2}, start=0.1),
    )
    g.node(
        "/control_lane",
        pub=["/cmd_vel"],
        sub=["/control/max_vel"],
        domain="control",
        behavior={"kind": "reactive_transform", "latency": 0.01, "payload": twist(0.2, 0.0)},
    )
    g.node("/gazebo", sub=["/cmd_vel"], domain="driver")
    write("rsr_attack_graph.json", g.doc())
    return {
        "name": "rsr-attack",
        "graph": "rsr_attack_graph.json",
        "duration": 4.0,
        "seed": 11,
        "instrument": True,
        "flags": ["host_match"],
        "attacks": [
            {
                "node": "/detect_parking",
                "gate": "host_match",
                "actions": [
                    {"at": 1.5, "topic": "/control/max_vel", "payload": {"scalar": 2.0}, "repeat_every": 0.25, "until": 3.5}
                ],
            }
        ],
        "policies": [{"cn": {"type": "RSRCN"}, "config": {"policy": "Constrain", "params": {"max_vel_limit": 0.22}}}],
        "assertions": [
            {
                "kind": "always",
                "id": "max_vel_bound",
                "topic": "/control/max_vel",
                "to": "/control_lane",
                "predicate": {"compare": {"field": "data", "op": "<=", "value": 0.22}},
            }
        ],
    }


MAL_LOC = {"x_min": 6.0, "x_max": 10.0, "y_min": 6.0, "y_max": 10.0}


def msr_attack():
    g = Graph("msr-attack")
    g.topic("/odom", ODOM)
    g.topic("/cmd_vel", TWIST)
    g.topic("/move_base_simple/goal", POSE)
    g.node("/gazebo", pub=["/odom"], sub=["/cmd_vel"], domain="driver", behavior=periodic(10.0, pose(1.0, 1.0)))
    g.node(
        "/move_base",
        pub=["/cmd_vel"],
        sub=["/odom", "/move_base_simple/goal"],
        domain="planning",
        behavior=periodic(10.0, twist(0.2, 0.0)),
    )
    g.node(
        "/tb3_monitor",
        pub=["/move_base_simple/goal"],
        domain="planning",
        behavior={
            "kind": "script",
            "actions": [{"at": 0.5, "topic": "/move_base_simple/goal", "payload": pose(2.0, 1.0)}],
        },
    )
    write("msr_attack_graph.json", g.doc())
    return {
        "name": "msr-attack",
        "graph": "msr_attack_graph.json",
        "duration": 4.0,
        "seed": 13,
        "instrument": True,
        "flags": ["host_match"],
        "attacks": [
            {
                "node": "/tb3_monitor",
                "gate": "host_match",
                "actions": [
                    {"at": 2.0, "topic": "/move_base_simple/goal", "payload": pose(8.0, 8.0), "repeat_every": 0.5, "until": 3.5}
                ],
            }
        ],
        "policies": [
            {
                "cn": {"type": "MSRCN"},
                "config": {
                    "policy": "MsrBlock",
                    "params": {
                        "msr_rules": [
                            {
                                "id": "unstable_area",
                                "condition": {"action": {"in_rect": MAL_LOC}},
                                "target_aflow": "/move_base_simple/goal",
                                "effect": "block",
                            }
                        ]
                    },
                },
            }
        ],
        "assertions": [
            {
                "kind": "never_delivered",
                "id": "goal_outside_unstable_area",
                "topic": "/move_base_simple/goal",
                "to": "/move_base",
                "predicate": {"in_rect": MAL_LOC},
            },
            {
                "kind": "eventually",
                "id": "benign_goal_arrives",
                "topic": "/move_base_simple/goal",
                "to": "/move_base",
                "by": 1.0,
            },
        ],
    }


def main():
    write("home_findings.json", home_findings())
    write("autorace_findings.json", autorace_findings())
    write("home.json", home())
    write("gr_attack.json", gr_attack())
    write("rsr_attack.json", rsr_attack())
    write("msr_attack.json", msr_attack())


if __name__ == "__main__":
    main()
