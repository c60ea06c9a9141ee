"""AV Label Tagger: pipeline stages"""

__version__ = "1.0.0"
__description__ = "Tag malware files with behaviors, platforms, vulnerabilities and packers from AV scan reports"
