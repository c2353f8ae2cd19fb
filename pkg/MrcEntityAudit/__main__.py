import sys

from MrcEntityAudit.cli import main

sys.exit(main())
