# `name` is the name of the package as used for `pip install package`
name = "private-feature-models"

# `path` is the name of the package for `import package`
# path = name.lower().replace("-", "_").replace(" ", "_")
path = "privfeat"

# Your version number should follow https://python.org/dev/peps/pep-0440 and
# https://semver.org
version = "0.1.0"
author = "Brett Graves"
author_email = "alienbrett648@gmail.com"
description = "Differentially private models of a private feature distribution, given a public feature pool"
url = "https://github.com/alienbrett/private-feature-models"
license = "apache"  # See https://choosealicense.com
