"""Training, top-down cascades, datasets and experiment drivers"""
