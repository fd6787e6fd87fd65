"""Engine modules: video, flow, masks, models, saliency and metrics."""
