#!/usr/bin/env python3
# Run versioning: hashed artifacts and metadata per CLI run

import os
import json
from datetime import datetime, timezone
import hashlib

from src import __version__


class RunVersioning:
    """Version records for the artifacts of each command"""

    def __init__(self, out_dir="runs"):
        self.versions_dir = os.path.join(out_dir, "versions")
        os.makedirs(self.versions_dir, exist_ok=True)

    def create_version(self, command, config, artifacts, metadata=None):
        """Record a run of command with its resolved config and artifact hashes"""
        version = self.generate_version_id(config)
        version_dir = os.path.join(self.versions_dir, command, version)
        os.makedirs(version_dir, exist_ok=True)

        version_metadata = {
            "version": version,
            "command": command,
            "created_at": datetime.now(timezone.utc).isoformat(),
            "code_version": __version__,
            "config": config,
            "metadata": metadata or {},
            "artifacts": {os.path.abspath(path): self.calculate_file_hash(path) for path in artifacts},
        }

        with open(os.path.join(version_dir, "metadata.json"), "w") as f:
            json.dump(version_metadata, f, indent=2)

        return version

    def generate_version_id(self, config):
        """Version ID from timestamp and the hash of the canonical config"""
        timestamp = datetime.now(timezone.utc).strftime("%Y%m%d_%H%M%S")
        return f"v{timestamp}_{self.config_hash(config)[:8]}"

    @staticmethod
    def config_hash(config):
        canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode()).hexdigest()

    @staticmethod
    def calculate_file_hash(file_path):
        """Calculate SHA256 hash of file"""
        hash_sha256 = hashlib.sha256()
        with open(file_path, "rb") as f:
            for chunk in iter(lambda: f.read(4096), b""):
                hash_sha256.update(chunk)
        return hash_sha256.hexdigest()

    def list_versions(self, command):
        """List all versions of a command, newest first"""
        command_dir = os.path.join(self.versions_dir, command)
        if not os.path.exists(command_dir):
            return []

        versions = []
        for version_id in os.listdir(command_dir):
            metadata_file = os.path.join(command_dir, version_id, "metadata.json")
            if os.path.exists(metadata_file):
                with open(metadata_file, "r") as f:
                    versions.append(json.load(f))

        return sorted(versions, key=lambda x: x["created_at"], reverse=True)

    def latest(self, command):
        versions = self.list_versions(command)
        return versions[0] if versions else None

    def verify_artifacts(self, command):
        """Re-hash the artifacts of the latest version; returns {path: matches}"""
        record = self.latest(command)
        if record is None:
            return {}
        return {
            path: os.path.exists(path) and self.calculate_file_hash(path) == digest
            for path, digest in record["artifacts"].items()
        }
