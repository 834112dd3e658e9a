# Generated by Django 5.2.8 on 2026-10-17 09:12

import django.utils.timezone
import stability.models
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='RunReport',
            fields=[
                ('run_id', models.CharField(default=stability.models.generate_run_id, editable=False, max_length=50, primary_key=True, serialize=False)),
                ('config_hash', models.CharField(max_length=64)),
                ('stage', models.CharField(max_length=30)),
                ('out_dir', models.CharField(max_length=500)),
                ('started', models.DateTimeField(default=django.utils.timezone.now)),
                ('finished', models.DateTimeField(blank=True, null=True)),
                ('exit_code', models.IntegerField(default=0)),
                ('manifest', models.JSONField(blank=True, default=list)),
                ('provenance', models.JSONField(blank=True, default=dict)),
                ('timings', models.JSONField(blank=True, default=dict, help_text='Seconds per stage')),
            ],
            options={
                'ordering': ['-started'],
                'indexes': [models.Index(fields=['config_hash'], name='stability_r_config__6d1f0b_idx')],
            },
        ),
        migrations.CreateModel(
            name='StageLog',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('run_id', models.CharField(max_length=50)),
                ('stage', models.CharField(max_length=30)),
                ('timestamp', models.DateTimeField(default=django.utils.timezone.now)),
                ('status', models.CharField(choices=[('STARTED', 'Stage started'), ('COMPLETED', 'Stage completed'), ('FAILED', 'Stage failed'), ('SKIPPED', 'Stage skipped'), ('CHECK_FAILED', 'Acceptance check failed')], max_length=20)),
                ('error_code', models.CharField(blank=True, max_length=30, null=True)),
                ('details', models.TextField(blank=True, null=True)),
            ],
            options={
                'ordering': ['timestamp', 'id'],
            },
        ),
    ]
