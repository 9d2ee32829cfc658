"""Trail-relative MAV navigation at desk scale.

A compact stack for following a forest-trail-like path with a
monocular-vision flavored perception model: soft three-way trail
labels (view orientation and lateral offset), a waypoint controller
that steers from those labels, metric scale alignment of an
arbitrarily scaled odometry frame, and a deterministic kinematic
simulator used to run the whole loop.
"""

__version__ = "0.1.0"
