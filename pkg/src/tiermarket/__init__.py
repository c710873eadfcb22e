"""Tiered serverless scheduling: welfare LPs, dual pricing, price tracking and CPT lotteries."""
__version__ = "0.1.0"
