from django.db import models
from django.utils import timezone
import uuid


def generate_run_id():
    """Generates a unique run ID like RUN-1A2B3C4D"""
    return f"RUN-{str(uuid.uuid4())[:8].upper()}"


class RunReport(models.Model):
    """
    One invocation of the run command: config hash, requested stage,
    artifact manifest, provenance and wall-clock timings.
    """
    run_id = models.CharField(
        primary_key=True,
        max_length=50,
        default=generate_run_id,
        editable=False
    )
    config_hash = models.CharField(max_length=64)
    stage = models.CharField(max_length=30)
    out_dir = models.CharField(max_length=500)
    started = models.DateTimeField(default=timezone.now)
    finished = models.DateTimeField(null=True, blank=True)
    exit_code = models.IntegerField(default=0)
    manifest = models.JSONField(default=list, blank=True)
    provenance = models.JSONField(default=dict, blank=True)
    timings = models.JSONField(default=dict, blank=True, help_text="Seconds per stage")

    class Meta:
        ordering = ['-started']
        indexes = [
            models.Index(fields=['config_hash']),
        ]

    def __str__(self):
        return f"{self.run_id} ({self.stage}, exit {self.exit_code})"


class StageLog(models.Model):
    """
    The Auditor: one row per stage transition.
    """
    STATUS_CHOICES = [
        ('STARTED', 'Stage started'),
        ('COMPLETED', 'Stage completed'),
        ('FAILED', 'Stage failed'),
        ('SKIPPED', 'Stage skipped'),
        ('CHECK_FAILED', 'Acceptance check failed'),
    ]

    run_id = models.CharField(max_length=50)
    stage = models.CharField(max_length=30)
    timestamp = models.DateTimeField(default=timezone.now)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES)
    error_code = models.CharField(max_length=30, null=True, blank=True)
    details = models.TextField(blank=True, null=True)

    class Meta:
        ordering = ['timestamp', 'id']

    def __str__(self):
        return f"[{self.timestamp}] {self.run_id} {self.stage} - {self.status}"
