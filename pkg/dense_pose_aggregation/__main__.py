import sys

from dense_pose_aggregation.cli import main

sys.exit(main())
