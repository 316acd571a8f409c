"""Force-resilient quadrotor planning."""
