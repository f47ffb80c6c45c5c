# Tumor invasion parameter estimation
