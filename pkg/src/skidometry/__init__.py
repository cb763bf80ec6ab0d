"""Skid-steer LiDAR-IMU-wheel odometry with an online-learned kinematic network."""

__version__ = "0.1.0"
