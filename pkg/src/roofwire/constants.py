"""Method constants. Every other module takes its defaults from here."""

# candidate generation
MIN_CLUSTER_POINTS = 5          # points a dilated pixel cluster must capture
MAX_DILATIONS = 20              # safety cap on mask growth
MERGE_RADIUS = 0.5              # m, cluster membership ball around the centroid
MERGE_OVERLAP = 0.5             # shared fraction (of the smaller cluster) that triggers a merge
MIN_CLUSTER_PIXELS = 3          # smaller pixel components are discarded

# patches
CUBE_SIDE = 4.0                 # m, vertex patch edge length
CYLINDER_RADIUS = 1.0           # m, edge patch radius
CYLINDER_EXTENSION = 1.0        # m, edge patch overhang past each endpoint
MAX_PATCH_POINTS = 1024         # larger patches are uniformly subsampled

# networks and training
POOL_MAX_WEIGHT = 0.7           # mixed global pooling: weight of the max branch
POOL_MEAN_WEIGHT = 0.3          # ... and of the mean branch
BATCH_SIZE = 128

# inference and evaluation
VERTEX_THRESHOLD = 0.59         # vertex classifier probability cutoff
EDGE_THRESHOLD = 0.65           # edge classifier probability cutoff
MATCH_TAU = 0.5                 # m, vertex matching distance for scoring
