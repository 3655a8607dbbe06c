"""Edge-cloud predictive maintenance platform.

Edge agents score sensor windows online with a Local Outlier Factor model
and forward only suspect data (speed layer); the cloud predicts failures,
drives maintenance orders, and retrains models from batch-uploaded raw
data, pushing improved versions back to the edges (batch layer).
"""

__version__ = "0.1.0"
