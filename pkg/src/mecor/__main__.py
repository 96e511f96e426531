from mecor.cli import main

raise SystemExit(main())
