"""Visual-inertial odometry core with line flow and Manhattan-world constraints."""
