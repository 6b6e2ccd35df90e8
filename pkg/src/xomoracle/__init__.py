"""Execute-only-memory code recovery against simulated ARMv6-M devices."""
