"""Physical and numerical defaults, collected in one place.

Every value here is a package default, overridable through task or run
configuration.  None of them is a measured quantity: they were chosen so
that the tasks are stable under the fixed 0.1 s control step and remain
trainable at desk scale.
"""

# Integration.  The control timestep is fixed at 0.1 s; velocity damping is
# multiplicative on the previous velocity (v <- v*(1-drag) + f/m*dt).
DT = 0.1
DEFAULT_DRAG = 0.25

# Penalty contacts: linear spring on overlap depth plus a normal damper,
# clamped to be repulsive only.  Stable under symplectic Euler at DT for
# the masses used in the tasks (k/m <= (2/DT)^2).
CONTACT_STIFFNESS = 80.0
CONTACT_DAMPING = 2.0

# Rigid linkages: weak spring toward rest length plus exact position
# projection after integration.
JOINT_STIFFNESS = 50.0

# Standard-deviation floor applied before Wasserstein evaluation.
STD_FLOOR = 1e-6

# Deviation diversity below this with a positive target counts as collapse.
COLLAPSE_THRESHOLD = 1e-8

# --- Soccer ------------------------------------------------------------
# Pitch uses 3 x 4.5 proportions: length along x, width along y.
PITCH_LENGTH = 4.5
PITCH_WIDTH = 3.0
GOAL_WIDTH = 0.75
GOAL_DEPTH = 0.3
WALL_THICKNESS = 0.1

AGENT_RADIUS = 0.035
AGENT_MASS = 1.0
AGENT_MAX_SPEED = 0.5
AGENT_FORCE_GAIN = 2.0

BALL_RADIUS = 0.02
BALL_MASS = 0.25
BALL_MAX_SPEED = 1.0
BALL_DRAG = 0.1

KICK_RANGE = 0.12
KICK_CONE_HALF_ANGLE = 0.7854  # 45 degrees
KICK_IMPULSE_GAIN = 0.25       # ball delta-v per unit power at full charge
ROTATION_RATE = 3.0            # rad/s at full rotation action

# Physically-different embodiments, multipliers on (radius, max_speed).
EMBODIMENT_MULTIPLIERS = {
    "goalie": (1.6, 0.6),
    "defender": (1.0, 1.0),
    "attacker": (0.75, 1.3),
}

# Formation anchor noise, as a fraction of pitch width.
FORMATION_NOISE_FRAC = 0.05

# --- Pac-Men -----------------------------------------------------------
PACMEN_AGENT_RADIUS = 0.05
PACMEN_CELL = 2 * PACMEN_AGENT_RADIUS   # grid cell = agent diameter
PACMEN_CORRIDOR_UNIT_CELLS = 5          # corridor length unit, in cells
PACMEN_CORRIDOR_WIDTH_CELLS = 3
PACMEN_MAX_SPEED = 0.5
PACMEN_FORCE_GAIN = 2.0

# --- Dynamic Passage ---------------------------------------------------
# Stiffer contacts here: the narrowed gap must actually stop the large
# agent instead of letting it squeeze through the penalty springs.
PASSAGE_CONTACT_STIFFNESS = 300.0
PASSAGE_CONTACT_DAMPING = 4.0
PASSAGE_ARENA_HALF = 1.0
PASSAGE_SMALL_RADIUS = 0.05
PASSAGE_LARGE_RADIUS = 0.10
PASSAGE_GAP_WIDTH = 0.26        # fits the large agent with margin
PASSAGE_NARROW_WIDTH = 0.14     # well below the large agent's diameter
PASSAGE_GAP_SEPARATION = 0.5    # center to center; equals linkage length
PASSAGE_LINK_LENGTH = 0.5
PASSAGE_WALL_HALF_THICKNESS = 0.05
PASSAGE_MAX_SPEED = 0.4
PASSAGE_FORCE_GAIN = 1.5
PASSAGE_GOAL_TOL = 0.1

# --- Tag ---------------------------------------------------------------
TAG_ARENA_HALF = 1.2
TAG_CHASER_RADIUS = 0.06
TAG_EVADER_RADIUS = 0.05
TAG_OBSTACLE_RADIUS = 0.15
TAG_CHASER_MAX_SPEED = 0.45
TAG_EVADER_MAX_SPEED = 0.6
TAG_FORCE_GAIN = 2.0

# --- Heuristic opponent ------------------------------------------------
HEURISTIC_KP = 5.0
HEURISTIC_KD = 2.0
HEURISTIC_REPLAN_EVERY = 10
HEURISTIC_CANDIDATES = 16
HEURISTIC_VALUE_WEIGHTS = {
    "ball_proximity": 1.0,
    "wall": -2.0,
    "lane_blocking": -1.5,
    "own_goal_defense": 1.5,
    "teammate_spacing": -1.0,
}
HEURISTIC_WALL_MARGIN = 0.15
HEURISTIC_LANE_WIDTH = 0.25
HEURISTIC_SPACING_RADIUS = 0.5
HEURISTIC_DECISION_NOISE = 0.5   # value-score noise scale at decision=0
HEURISTIC_PRECISION_POS_NOISE = 0.3
HEURISTIC_PRECISION_VEL_NOISE = 0.2
