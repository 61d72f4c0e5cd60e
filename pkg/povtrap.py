#!/usr/bin/env python3
# file used for unit testing
if __name__ == "__main__":
    import povtrap

    povtrap.main()
